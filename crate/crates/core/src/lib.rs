pub mod cbf;
pub mod cli;
pub mod clf;
pub mod error;
pub mod hierarchy;
pub mod model;
pub mod oracles;
pub mod qpsolver;
pub mod scenario;
pub mod sim;
pub mod tasks;

pub use error::{Error, Result};
