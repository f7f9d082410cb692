use std::fmt;

/// Errors raised by plant evaluation, task construction, constraint
/// synthesis and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Cholesky factorization of the inertia matrix failed.
    SingularInertia,
    /// A task referenced a frame the plant does not have.
    UnknownFrame(String),
    /// The tracked point sits on the obstacle center, so the distance gradient is undefined.
    DegenerateDistance,
    NonUnitQuaternion { norm: f64 },
    InvalidLimits(String),
    /// `B Bᵀ` is numerically singular and Jacobi's formula degenerates.
    SingularBBt,
    NoStabilizingSolution,
    InvalidEps(f64),
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NotHurwitz { max_real_part: f64 },
    UnsupportedRelativeDegree(usize),
    IllConditioned,
    TooManyRows { rows: usize, max: usize },
    InvalidPlant(String),
    InvalidTask(String),
    UnsafeInitialState { task: String, h: f64 },
    NumericalBlowup { t: f64 },
    UnknownQuantity(String),
    Parse(String),
    /// A well-formed configuration that breaks a rule.
    Validation(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SingularInertia => write!(f, "inertia matrix is not positive definite"),
            Error::UnknownFrame(name) => write!(f, "unknown frame `{name}` for this plant"),
            Error::DegenerateDistance => {
                write!(f, "tracked point coincides with the obstacle center")
            }
            Error::NonUnitQuaternion { norm } => {
                write!(f, "quaternion is not unit norm (|q| = {norm})")
            }
            Error::InvalidLimits(msg) => write!(f, "invalid joint limits: {msg}"),
            Error::SingularBBt => write!(f, "B Bᵀ is numerically singular"),
            Error::NoStabilizingSolution => {
                write!(f, "Riccati iteration did not reach a stabilizing solution")
            }
            Error::InvalidEps(eps) => write!(f, "convergence rate eps must be positive, got {eps}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected dimension {expected}, found {found}"),
            Error::NotHurwitz { max_real_part } => write!(
                f,
                "barrier gain is not Hurwitz (largest eigenvalue real part {max_real_part})"
            ),
            Error::UnsupportedRelativeDegree(r) => {
                write!(f, "relative degree {r} is not supported")
            }
            Error::IllConditioned => write!(f, "QP KKT system could not be factorized"),
            Error::TooManyRows { rows, max } => {
                write!(f, "oracle limited to {max} inequality rows, got {rows}")
            }
            Error::InvalidPlant(msg) => write!(f, "invalid plant: {msg}"),
            Error::InvalidTask(msg) => write!(f, "invalid task: {msg}"),
            Error::UnsafeInitialState { task, h } => {
                write!(f, "initial state violates set task `{task}` (h = {h})")
            }
            Error::NumericalBlowup { t } => write!(f, "state diverged at t = {t}"),
            Error::UnknownQuantity(q) => write!(f, "unknown logged quantity `{q}`"),
            Error::Parse(msg) => write!(f, "{msg}"),
            Error::Validation(msg) => write!(f, "{msg}"),
            Error::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
