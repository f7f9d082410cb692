//! Simulated plants in Lagrangian form
//! `M(q) ζ̇ + C(q, ζ) ζ + D ζ + g(q) = B(q) u`.
//!
//! Two plants are provided:
//!
//! * a chain of `m` decoupled unit-mass double integrators, where every
//!   quantity is known in closed form, and
//! * a planar floating-base snake: a base link followed by revolute joints,
//!   with body-fixed thrusters and one torque input per joint. Its actuator
//!   configuration matrix depends on the joint angles, which makes
//!   `det(B Bᵀ)` a meaningful quantity to keep away from zero.
//!
//! For the snake the generalized coordinates are `q = (x, y, ψ, θ₁ … θₙ)`,
//! where `(x, y)` is the tail tip of the base link and `ψ` its heading. Link
//! `k` has absolute angle `φₖ = ψ + θ₁ + … + θₖ`. Velocities are plain
//! coordinate rates (`ξ̇ = ζ`), so there is no kinematic transformation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{check_dim, Error, Result};

/// Configuration, velocity and time of a simulated plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub xi: DVector<f64>,
    pub zeta: DVector<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn new(xi: DVector<f64>, zeta: DVector<f64>, t: f64) -> Self {
        Self { xi, zeta, t }
    }

    pub fn at_rest(xi: DVector<f64>) -> Self {
        let n = xi.len();
        Self::new(xi, DVector::zeros(n), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.xi.iter().all(|v| v.is_finite())
            && self.zeta.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the stacked `(ξ, ζ)` vector.
    pub fn norm(&self) -> f64 {
        (self.xi.norm_squared() + self.zeta.norm_squared()).sqrt()
    }
}

/// The five matrices of the equations of motion at one state.
#[derive(Debug, Clone)]
pub struct PlantMatrices {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub gravity: DVector<f64>,
    pub actuation: DMatrix<f64>,
}

/// A body-fixed thruster. `angle` is measured from the link axis, in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thruster {
    pub link: usize,
    pub offset: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnakeParams {
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    /// Rotational inertia of each link about its center of mass.
    pub link_inertias: Vec<f64>,
    /// Linear damping coefficient per generalized coordinate.
    pub damping: Vec<f64>,
    /// Net weight per unit mass acting along `-y` (zero when neutrally buoyant).
    pub gravity: f64,
    pub thrusters: Vec<Thruster>,
}

impl SnakeParams {
    /// Three 0.5 m, 2 kg links with four thrusters: surge and sway on the
    /// base link, sway and surge on the head link. The damping keeps the
    /// fastest velocity mode near 6.5 s⁻¹, well below a 100 Hz control rate.
    pub fn three_link() -> Self {
        let lengths = vec![0.5; 3];
        let masses = vec![2.0; 3];
        let inertias = lengths
            .iter()
            .zip(&masses)
            .map(|(l, m)| m * l * l / 12.0)
            .collect();
        Self {
            link_lengths: lengths,
            link_masses: masses,
            link_inertias: inertias,
            damping: vec![1.0, 1.0, 0.2, 0.05, 0.05],
            gravity: 0.0,
            thrusters: vec![
                Thruster { link: 0, offset: 0.1, angle: 0.0 },
                Thruster { link: 0, offset: 0.25, angle: FRAC_PI_2 },
                Thruster { link: 2, offset: 0.25, angle: FRAC_PI_2 },
                Thruster { link: 2, offset: 0.4, angle: 0.0 },
            ],
        }
    }

    pub fn links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn joints(&self) -> usize {
        self.links().saturating_sub(1)
    }

    pub fn dof(&self) -> usize {
        3 + self.joints()
    }

    fn validate(&self) -> Result<()> {
        let links = self.links();
        if links == 0 {
            return Err(Error::InvalidPlant("snake needs at least one link".into()));
        }
        if self.link_masses.len() != links || self.link_inertias.len() != links {
            return Err(Error::InvalidPlant(
                "link_masses and link_inertias must have one entry per link".into(),
            ));
        }
        if self.damping.len() != self.dof() {
            return Err(Error::InvalidPlant(format!(
                "damping needs {} entries (one per coordinate), got {}",
                self.dof(),
                self.damping.len()
            )));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.link_lengths) {
            return Err(Error::InvalidPlant("link lengths must be > 0".into()));
        }
        if !positive(&self.link_masses) {
            return Err(Error::InvalidPlant("link masses must be > 0".into()));
        }
        if !positive(&self.link_inertias) {
            return Err(Error::InvalidPlant("link inertias must be > 0".into()));
        }
        if self.damping.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidPlant("damping must be >= 0".into()));
        }
        if !self.gravity.is_finite() {
            return Err(Error::InvalidPlant("gravity must be finite".into()));
        }
        for (i, t) in self.thrusters.iter().enumerate() {
            if t.link >= links {
                return Err(Error::InvalidPlant(format!(
                    "thruster {i} is mounted on link {} but the snake has {links} links",
                    t.link
                )));
            }
            if !(0.0..=self.link_lengths[t.link]).contains(&t.offset) || !t.angle.is_finite() {
                return Err(Error::InvalidPlant(format!(
                    "thruster {i} offset must lie on its link"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantKind {
    DoubleIntegratorChain { dim: usize },
    PlanarSnake(SnakeParams),
}

/// A point (or coordinate selection) whose task-space motion a task tracks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// All configuration coordinates.
    Identity,
    /// A single configuration coordinate.
    Coordinate(usize),
    /// Tail tip of the base link.
    Base,
    /// Head tip of the last link.
    EndEffector,
    /// Center of mass of a link.
    LinkCom(usize),
}

impl Frame {
    pub fn name(&self) -> String {
        match self {
            Frame::Identity => "identity".into(),
            Frame::Coordinate(i) => format!("coordinate({i})"),
            Frame::Base => "base".into(),
            Frame::EndEffector => "end_effector".into(),
            Frame::LinkCom(i) => format!("link_com({i})"),
        }
    }
}

/// Position, Jacobian and Jacobian rate of a tracked point.
#[derive(Debug, Clone)]
pub struct PointKinematics {
    pub position: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub jacobian_dot: DMatrix<f64>,
}

/// Drift and input map of the velocity dynamics, `ζ̇ = drift + minv_b · u`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub minv_b: DMatrix<f64>,
    pub drift: DVector<f64>,
}

impl DynamicsTerms {
    pub fn accel(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.drift + &self.minv_b * u
    }
}

/// `det(B Bᵀ)` with its configuration gradient and its second derivative
/// along the current velocity (`ζᵀ ∇² det ζ`).
#[derive(Debug, Clone)]
pub struct ActuationDerivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub curvature: f64,
}

/// `amp · sin(Σₖ coeffs[k] φₖ + phase)` contribution to one entry of `B`.
#[derive(Debug, Clone)]
struct TrigTerm {
    row: usize,
    col: usize,
    amp: f64,
    phase: f64,
    coeffs: Vec<f64>,
    /// Derivative of the argument with respect to each coordinate.
    sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Plant {
    kind: PlantKind,
    b_terms: Vec<TrigTerm>,
}

/// Whether link `k`'s absolute angle depends on coordinate `a`.
fn depends(a: usize, k: usize) -> bool {
    match a {
        0 | 1 => false,
        2 => true,
        _ => k >= a - 2,
    }
}

fn unit(angle: f64) -> (f64, f64) {
    (angle.cos(), angle.sin())
}

impl Plant {
    pub fn new(kind: PlantKind) -> Result<Self> {
        let b_terms = match &kind {
            PlantKind::DoubleIntegratorChain { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidPlant("double integrator needs dim >= 1".into()));
                }
                Vec::new()
            }
            PlantKind::PlanarSnake(p) => {
                p.validate()?;
                actuation_terms(p)
            }
        };
        Ok(Self { kind, b_terms })
    }

    pub fn double_integrator(dim: usize) -> Result<Self> {
        Self::new(PlantKind::DoubleIntegratorChain { dim })
    }

    pub fn snake(params: SnakeParams) -> Result<Self> {
        Self::new(PlantKind::PlanarSnake(params))
    }

    pub fn kind(&self) -> &PlantKind {
        &self.kind
    }

    pub fn dof(&self) -> usize {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { dim } => *dim,
            PlantKind::PlanarSnake(p) => p.dof(),
        }
    }

    /// Number of actuator inputs.
    pub fn inputs(&self) -> usize {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { dim } => *dim,
            PlantKind::PlanarSnake(p) => p.thrusters.len() + p.joints(),
        }
    }

    /// Indices of the revolute joint coordinates.
    pub fn joint_indices(&self) -> Vec<usize> {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { .. } => Vec::new(),
            PlantKind::PlanarSnake(p) => (3..3 + p.joints()).collect(),
        }
    }

    /// Column labels with units for each configuration coordinate.
    pub fn coordinate_labels(&self) -> Vec<String> {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { dim } => (0..*dim).map(|i| format!("q{i}")).collect(),
            PlantKind::PlanarSnake(p) => {
                let mut names = vec!["x_m".to_string(), "y_m".into(), "psi_rad".into()];
                names.extend((1..=p.joints()).map(|j| format!("theta{j}_rad")));
                names
            }
        }
    }

    pub fn check_state(&self, state: &PlantState) -> Result<()> {
        check_dim("configuration", self.dof(), state.xi.len())?;
        check_dim("velocity", self.dof(), state.zeta.len())
    }

    pub fn eval_matrices(&self, state: &PlantState) -> PlantMatrices {
        let n = self.dof();
        match &self.kind {
            PlantKind::DoubleIntegratorChain { .. } => PlantMatrices {
                mass: DMatrix::identity(n, n),
                coriolis: DMatrix::zeros(n, n),
                damping: DMatrix::zeros(n, n),
                gravity: DVector::zeros(n),
                actuation: DMatrix::identity(n, n),
            },
            PlantKind::PlanarSnake(p) => {
                let (mass, dmass) = self.mass_and_derivatives(p, &state.xi);
                PlantMatrices {
                    coriolis: christoffel_coriolis(&dmass, &state.zeta),
                    mass,
                    damping: DMatrix::from_diagonal(&DVector::from_column_slice(&p.damping)),
                    gravity: self.gravity_vector(p, &state.xi),
                    actuation: self.actuation_matrix(&state.xi),
                }
            }
        }
    }

    /// `ζ̇ = M⁻¹ (B u − C ζ − D ζ − g)`.
    pub fn forward_dynamics(&self, state: &PlantState, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input", self.inputs(), u.len())?;
        let m = self.eval_matrices(state);
        let rhs = &m.actuation * u
            - &m.coriolis * &state.zeta
            - &m.damping * &state.zeta
            - &m.gravity;
        let chol = m.mass.cholesky().ok_or(Error::SingularInertia)?;
        Ok(chol.solve(&rhs))
    }

    /// Factorizes `M` once and returns the pieces every task needs.
    pub fn dynamics_terms(&self, state: &PlantState) -> Result<DynamicsTerms> {
        let m = self.eval_matrices(state);
        let bias = &m.coriolis * &state.zeta + &m.damping * &state.zeta + &m.gravity;
        let chol = m.mass.cholesky().ok_or(Error::SingularInertia)?;
        Ok(DynamicsTerms {
            minv_b: chol.solve(&m.actuation),
            drift: -chol.solve(&bias),
        })
    }

    /// Full state derivative `(ξ̇, ζ̇)` for the integrator.
    pub fn state_derivative(
        &self,
        xi: &DVector<f64>,
        zeta: &DVector<f64>,
        t: f64,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let state = PlantState::new(xi.clone(), zeta.clone(), t);
        let acc = self.forward_dynamics(&state, u)?;
        Ok((zeta.clone(), acc))
    }

    pub fn task_jacobian(
        &self,
        state: &PlantState,
        frame: &Frame,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let k = self.point_kinematics(state, frame)?;
        Ok((k.jacobian, k.jacobian_dot))
    }

    pub fn point_kinematics(&self, state: &PlantState, frame: &Frame) -> Result<PointKinematics> {
        let n = self.dof();
        match (frame, &self.kind) {
            (Frame::Identity, _) => Ok(PointKinematics {
                position: state.xi.clone(),
                jacobian: DMatrix::identity(n, n),
                jacobian_dot: DMatrix::zeros(n, n),
            }),
            (Frame::Coordinate(i), _) if *i < n => {
                let mut jac = DMatrix::zeros(1, n);
                jac[(0, *i)] = 1.0;
                Ok(PointKinematics {
                    position: DVector::from_element(1, state.xi[*i]),
                    jacobian: jac,
                    jacobian_dot: DMatrix::zeros(1, n),
                })
            }
            (Frame::Base, PlantKind::PlanarSnake(p)) => Ok(link_point(p, &state.xi, &state.zeta, 0, 0.0)),
            (Frame::EndEffector, PlantKind::PlanarSnake(p)) => {
                let last = p.links() - 1;
                Ok(link_point(p, &state.xi, &state.zeta, last, p.link_lengths[last]))
            }
            (Frame::LinkCom(l), PlantKind::PlanarSnake(p)) if *l < p.links() => {
                Ok(link_point(p, &state.xi, &state.zeta, *l, 0.5 * p.link_lengths[*l]))
            }
            _ => Err(Error::UnknownFrame(frame.name())),
        }
    }

    /// Actuation measure `det(B Bᵀ)`.
    pub fn actuation_measure(&self, state: &PlantState) -> f64 {
        let b = self.actuation_matrix(&state.xi);
        (&b * b.transpose()).determinant().max(0.0)
    }

    /// Gradient of `det(B Bᵀ)` by Jacobi's formula and its second derivative
    /// along `ζ`.
    pub fn actuation_derivatives(&self, state: &PlantState) -> Result<ActuationDerivatives> {
        let n = self.dof();
        let b = self.actuation_matrix(&state.xi);
        let s = &b * b.transpose();
        let det = s.determinant();
        let scale = s.norm().powi(n as i32).max(f64::MIN_POSITIVE);
        if !(det > 1e-12 * scale) {
            return Err(Error::SingularBBt);
        }
        let s_inv = s.clone().cholesky().ok_or(Error::SingularBBt)?.inverse();
        let (phi, _) = self.angles(&state.xi);

        let mut gradient = DVector::zeros(n);
        for (c, g) in gradient.iter_mut().enumerate() {
            let db = self.actuation_partial(&phi, c);
            let ds = &db * b.transpose() + &b * db.transpose();
            *g = det * (&s_inv * ds).trace();
        }

        let (b_dot, b_ddot) = self.actuation_rates(&phi, &state.zeta);
        let s_dot = &b_dot * b.transpose() + &b * b_dot.transpose();
        let s_ddot = &b_ddot * b.transpose()
            + 2.0 * &b_dot * b_dot.transpose()
            + &b * b_ddot.transpose();
        let si_sd = &s_inv * &s_dot;
        let tr = si_sd.trace();
        let curvature = det * (tr * tr - (&si_sd * &si_sd).trace() + (&s_inv * s_ddot).trace());
        Ok(ActuationDerivatives {
            value: det,
            gradient,
            curvature,
        })
    }

    /// Partial derivatives `∂M/∂q_b` for every coordinate (empty for
    /// constant-inertia plants).
    pub fn mass_matrix_partials(&self, xi: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { .. } => Vec::new(),
            PlantKind::PlanarSnake(p) => self.mass_and_derivatives(p, xi).1,
        }
    }

    fn angles(&self, xi: &DVector<f64>) -> (Vec<f64>, usize) {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { .. } => (Vec::new(), 0),
            PlantKind::PlanarSnake(p) => (link_angles(p, xi), p.links()),
        }
    }

    pub fn actuation_matrix(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            PlantKind::DoubleIntegratorChain { dim } => DMatrix::identity(*dim, *dim),
            PlantKind::PlanarSnake(p) => {
                let phi = link_angles(p, xi);
                let mut b = DMatrix::zeros(p.dof(), self.inputs());
                for term in &self.b_terms {
                    b[(term.row, term.col)] += term.amp * term.argument(&phi).sin();
                }
                for j in 0..p.joints() {
                    b[(3 + j, p.thrusters.len() + j)] = 1.0;
                }
                b
            }
        }
    }

    fn actuation_partial(&self, phi: &[f64], coord: usize) -> DMatrix<f64> {
        let mut db = DMatrix::zeros(self.dof(), self.inputs());
        for term in &self.b_terms {
            let s = term.sigma[coord];
            if s != 0.0 {
                db[(term.row, term.col)] += term.amp * s * term.argument(phi).cos();
            }
        }
        db
    }

    /// `Ḃ` and `B̈` along `ζ` with zero coordinate acceleration.
    fn actuation_rates(&self, phi: &[f64], zeta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut b_dot = DMatrix::zeros(self.dof(), self.inputs());
        let mut b_ddot = DMatrix::zeros(self.dof(), self.inputs());
        for term in &self.b_terms {
            let rate: f64 = term.sigma.iter().zip(zeta.iter()).map(|(s, z)| s * z).sum();
            if rate != 0.0 {
                let arg = term.argument(phi);
                b_dot[(term.row, term.col)] += term.amp * rate * arg.cos();
                b_ddot[(term.row, term.col)] -= term.amp * rate * rate * arg.sin();
            }
        }
        (b_dot, b_ddot)
    }

    fn mass_and_derivatives(
        &self,
        p: &SnakeParams,
        xi: &DVector<f64>,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = p.dof();
        let phi = link_angles(p, xi);
        let mut mass = DMatrix::zeros(n, n);
        let mut dmass = vec![DMatrix::zeros(n, n); n];
        for l in 0..p.links() {
            let weights = point_weights(p, l, 0.5 * p.link_lengths[l]);
            let jac = point_jacobian(&phi, &weights, n);
            let m = p.link_masses[l];
            mass += m * jac.transpose() * &jac;
            let mut rot = DVector::zeros(n);
            for a in 2..n {
                if depends(a, l) {
                    rot[a] = 1.0;
                }
            }
            mass += p.link_inertias[l] * &rot * rot.transpose();
            for (b, dm) in dmass.iter_mut().enumerate().skip(2) {
                let h = point_jacobian_partial(&phi, &weights, n, b);
                let jt_h = jac.transpose() * h;
                *dm += m * (&jt_h + jt_h.transpose());
            }
        }
        (mass, dmass)
    }

    fn gravity_vector(&self, p: &SnakeParams, xi: &DVector<f64>) -> DVector<f64> {
        let n = p.dof();
        let mut g = DVector::zeros(n);
        if p.gravity == 0.0 {
            return g;
        }
        let phi = link_angles(p, xi);
        for l in 0..p.links() {
            let weights = point_weights(p, l, 0.5 * p.link_lengths[l]);
            let jac = point_jacobian(&phi, &weights, n);
            g += p.link_masses[l] * p.gravity * jac.row(1).transpose();
        }
        g
    }
}

impl TrigTerm {
    fn argument(&self, phi: &[f64]) -> f64 {
        self.coeffs.iter().zip(phi).map(|(c, p)| c * p).sum::<f64>() + self.phase
    }
}

/// Decomposes every thruster column of `B` into sinusoids of link angles.
fn actuation_terms(p: &SnakeParams) -> Vec<TrigTerm> {
    let links = p.links();
    let n = p.dof();
    let make = |row: usize, col: usize, amp: f64, phase: f64, coeffs: Vec<f64>| {
        let sigma = (0..n)
            .map(|a| (0..links).filter(|&k| depends(a, k)).map(|k| coeffs[k]).sum())
            .collect();
        TrigTerm {
            row,
            col,
            amp,
            phase,
            coeffs,
            sigma,
        }
    };
    let mut terms = Vec::new();
    for (col, t) in p.thrusters.iter().enumerate() {
        let mut heading = vec![0.0; links];
        heading[t.link] = 1.0;
        terms.push(make(0, col, 1.0, t.angle + FRAC_PI_2, heading.clone()));
        terms.push(make(1, col, 1.0, t.angle, heading.clone()));
        // Moment arm about each angular coordinate: e⊥(φₖ)·e(φₗ + β) = sin(φₗ + β − φₖ).
        let weights = point_weights(p, t.link, t.offset);
        for a in 2..n {
            for (k, &w) in weights.iter().enumerate() {
                if w != 0.0 && depends(a, k) {
                    let mut coeffs = heading.clone();
                    coeffs[k] -= 1.0;
                    terms.push(make(a, col, w, t.angle, coeffs));
                }
            }
        }
    }
    terms
}

fn link_angles(p: &SnakeParams, xi: &DVector<f64>) -> Vec<f64> {
    let mut phi = Vec::with_capacity(p.links());
    let mut acc = xi[2];
    phi.push(acc);
    for j in 0..p.joints() {
        acc += xi[3 + j];
        phi.push(acc);
    }
    phi
}

/// Lever lengths along each link for a point at `offset` on link `link`.
fn point_weights(p: &SnakeParams, link: usize, offset: f64) -> Vec<f64> {
    (0..p.links())
        .map(|k| match k.cmp(&link) {
            std::cmp::Ordering::Less => p.link_lengths[k],
            std::cmp::Ordering::Equal => offset,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect()
}

fn point_jacobian(phi: &[f64], weights: &[f64], n: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(2, n);
    jac[(0, 0)] = 1.0;
    jac[(1, 1)] = 1.0;
    for a in 2..n {
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 && depends(a, k) {
                let (c, s) = unit(phi[k]);
                jac[(0, a)] -= w * s;
                jac[(1, a)] += w * c;
            }
        }
    }
    jac
}

/// `∂J/∂q_b` for a point with the given lever weights.
fn point_jacobian_partial(phi: &[f64], weights: &[f64], n: usize, b: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(2, n);
    for a in 2..n {
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 && depends(a, k) && depends(b, k) {
                let (c, s) = unit(phi[k]);
                h[(0, a)] -= w * c;
                h[(1, a)] -= w * s;
            }
        }
    }
    h
}

fn link_point(
    p: &SnakeParams,
    xi: &DVector<f64>,
    zeta: &DVector<f64>,
    link: usize,
    offset: f64,
) -> PointKinematics {
    let n = p.dof();
    let phi = link_angles(p, xi);
    let weights = point_weights(p, link, offset);
    let mut position = DVector::from_column_slice(&[xi[0], xi[1]]);
    for (k, &w) in weights.iter().enumerate() {
        let (c, s) = unit(phi[k]);
        position[0] += w * c;
        position[1] += w * s;
    }
    let phi_dot: Vec<f64> = (0..p.links())
        .map(|k| (2..n).filter(|&a| depends(a, k)).map(|a| zeta[a]).sum())
        .collect();
    let mut jacobian_dot = DMatrix::zeros(2, n);
    for a in 2..n {
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 && depends(a, k) {
                let (c, s) = unit(phi[k]);
                jacobian_dot[(0, a)] -= w * c * phi_dot[k];
                jacobian_dot[(1, a)] -= w * s * phi_dot[k];
            }
        }
    }
    PointKinematics {
        position,
        jacobian: point_jacobian(&phi, &weights, n),
        jacobian_dot,
    }
}

/// `C_kj = Σᵢ Γ_ijk ζᵢ` with Christoffel symbols of the first kind.
fn christoffel_coriolis(dmass: &[DMatrix<f64>], zeta: &DVector<f64>) -> DMatrix<f64> {
    let n = zeta.len();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                if zeta[i] == 0.0 {
                    continue;
                }
                acc += 0.5 * (dmass[i][(k, j)] + dmass[j][(k, i)] - dmass[k][(i, j)]) * zeta[i];
            }
            c[(k, j)] = acc;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snake() -> Plant {
        Plant::snake(SnakeParams::three_link()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> PlantState {
        let xi = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let zeta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        PlantState::new(xi, zeta, 0.0)
    }

    #[test]
    fn double_integrator_matrices_are_identity() {
        let plant = Plant::double_integrator(3).unwrap();
        let state = PlantState::new(DVector::from_element(3, 0.7), DVector::from_element(3, -0.2), 1.0);
        let m = plant.eval_matrices(&state);
        assert_eq!(m.mass, DMatrix::identity(3, 3));
        assert_eq!(m.actuation, DMatrix::identity(3, 3));
        assert_eq!(m.coriolis, DMatrix::zeros(3, 3));
        assert_eq!(m.gravity, DVector::zeros(3));
    }

    #[test]
    fn double_integrator_forward_dynamics() {
        let plant = Plant::double_integrator(2).unwrap();
        let state = PlantState::at_rest(DVector::zeros(2));
        let acc = plant
            .forward_dynamics(&state, &DVector::from_column_slice(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(acc, DVector::from_column_slice(&[1.0, 0.0]));
    }

    #[test]
    fn straight_snake_mass_is_positive_definite() {
        let plant = snake();
        let m = plant.eval_matrices(&PlantState::at_rest(DVector::zeros(5)));
        assert!((&m.mass - m.mass.transpose()).norm() < 1e-14);
        let min_eig = m.mass.symmetric_eigenvalues().min();
        assert!(min_eig > 0.0, "λmin = {min_eig}");
    }

    #[test]
    fn mass_symmetric_positive_definite_at_random_configurations() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = random_state(&mut rng, 5);
            let m = plant.eval_matrices(&s).mass;
            assert!((&m - m.transpose()).amax() < 1e-13);
            assert!(m.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn mass_rate_minus_twice_coriolis_is_skew() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..50 {
            let s = random_state(&mut rng, 5);
            // Ṁ by central differences of M along the flow ξ̇ = ζ.
            let fwd = PlantState::new(&s.xi + h * &s.zeta, s.zeta.clone(), 0.0);
            let bwd = PlantState::new(&s.xi - h * &s.zeta, s.zeta.clone(), 0.0);
            let m_dot = (plant.eval_matrices(&fwd).mass - plant.eval_matrices(&bwd).mass) / (2.0 * h);
            let n = &m_dot - 2.0 * plant.eval_matrices(&s).coriolis;
            assert!((&n + n.transpose()).amax() <= 1e-6, "residual {}", (&n + n.transpose()).amax());
            let v = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            assert!((v.transpose() * &n * &v)[0].abs() <= 1e-6 * v.norm_squared());
        }
    }

    #[test]
    fn mass_partials_match_finite_differences() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 5);
        let partials = plant.mass_matrix_partials(&s.xi);
        let h = 1e-6;
        for (b, dm) in partials.iter().enumerate() {
            let mut e = DVector::zeros(5);
            e[b] = h;
            let fd = (plant.eval_matrices(&PlantState::at_rest(&s.xi + &e)).mass
                - plant.eval_matrices(&PlantState::at_rest(&s.xi - &e)).mass)
                / (2.0 * h);
            assert!((dm - fd).amax() < 1e-7);
        }
    }

    #[test]
    fn kinetic_energy_is_conserved_without_damping() {
        let mut params = SnakeParams::three_link();
        params.damping = vec![0.0; 5];
        let plant = Plant::snake(params).unwrap();
        let u = DVector::zeros(plant.inputs());
        let mut xi = DVector::from_column_slice(&[0.0, 0.0, 0.3, 0.4, -0.2]);
        let mut zeta = DVector::from_column_slice(&[0.2, -0.1, 0.3, -0.5, 0.4]);
        let energy = |xi: &DVector<f64>, zeta: &DVector<f64>| {
            let m = plant.eval_matrices(&PlantState::new(xi.clone(), zeta.clone(), 0.0)).mass;
            0.5 * (zeta.transpose() * m * zeta)[0]
        };
        let e0 = energy(&xi, &zeta);
        let h = 1e-3;
        let f = |xi: &DVector<f64>, zeta: &DVector<f64>| {
            plant.state_derivative(xi, zeta, 0.0, &u).unwrap()
        };
        for _ in 0..10_000 {
            let (a1, b1) = f(&xi, &zeta);
            let (a2, b2) = f(&(&xi + 0.5 * h * &a1), &(&zeta + 0.5 * h * &b1));
            let (a3, b3) = f(&(&xi + 0.75 * h * &a2), &(&zeta + 0.75 * h * &b2));
            xi += h * (2.0 / 9.0 * a1 + 1.0 / 3.0 * a2 + 4.0 / 9.0 * a3);
            zeta += h * (2.0 / 9.0 * b1 + 1.0 / 3.0 * b2 + 4.0 / 9.0 * b3);
        }
        let drift = (energy(&xi, &zeta) - e0).abs() / e0;
        assert!(drift <= 1e-4, "relative energy drift {drift}");
    }

    #[test]
    fn neutrally_buoyant_snake_at_rest_stays_at_rest() {
        let plant = snake();
        let s = PlantState::at_rest(DVector::from_column_slice(&[0.3, 0.1, 0.2, 0.1, 0.1]));
        let acc = plant.forward_dynamics(&s, &DVector::zeros(6)).unwrap();
        assert!(acc.amax() < 1e-15);
    }

    #[test]
    fn gravity_enters_as_minus_minv_g() {
        let mut params = SnakeParams::three_link();
        params.gravity = 9.81;
        let plant = Plant::snake(params).unwrap();
        let s = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.4, 0.2, -0.3]));
        let m = plant.eval_matrices(&s);
        let expected = -m.mass.clone().lu().solve(&m.gravity).unwrap();
        let acc = plant.forward_dynamics(&s, &DVector::zeros(6)).unwrap();
        assert!((acc - expected).amax() < 1e-12);
        // Total weight acts on the y coordinate.
        assert!((m.gravity[1] - 6.0 * 9.81).abs() < 1e-12);
    }

    #[test]
    fn single_link_end_effector_jacobian_at_zero_angle() {
        let params = SnakeParams {
            link_lengths: vec![0.8],
            link_masses: vec![1.0],
            link_inertias: vec![0.05],
            damping: vec![0.0; 3],
            gravity: 0.0,
            thrusters: vec![],
        };
        let plant = Plant::snake(params).unwrap();
        let s = PlantState::at_rest(DVector::zeros(3));
        let (jac, _) = plant.task_jacobian(&s, &Frame::EndEffector).unwrap();
        assert_eq!(jac[(0, 2)], 0.0);
        assert!((jac[(1, 2)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn identity_frame_jacobian() {
        let plant = Plant::double_integrator(3).unwrap();
        let s = PlantState::at_rest(DVector::zeros(3));
        let (j, jd) = plant.task_jacobian(&s, &Frame::Identity).unwrap();
        assert_eq!(j, DMatrix::identity(3, 3));
        assert_eq!(jd, DMatrix::zeros(3, 3));
    }

    #[test]
    fn unknown_frames_are_rejected() {
        let plant = Plant::double_integrator(2).unwrap();
        let s = PlantState::at_rest(DVector::zeros(2));
        assert!(matches!(
            plant.task_jacobian(&s, &Frame::EndEffector),
            Err(Error::UnknownFrame(_))
        ));
        let snake = snake();
        let s = PlantState::at_rest(DVector::zeros(5));
        assert!(matches!(
            snake.task_jacobian(&s, &Frame::LinkCom(7)),
            Err(Error::UnknownFrame(_))
        ));
    }

    #[test]
    fn point_jacobians_match_finite_differences() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for frame in [Frame::EndEffector, Frame::Base, Frame::LinkCom(1)] {
            for _ in 0..20 {
                let s = random_state(&mut rng, 5);
                let k = plant.point_kinematics(&s, &frame).unwrap();
                let mut fd = DMatrix::zeros(2, 5);
                for a in 0..5 {
                    let mut e = DVector::zeros(5);
                    e[a] = h;
                    let p = |xi: DVector<f64>| {
                        plant.point_kinematics(&PlantState::at_rest(xi), &frame).unwrap().position
                    };
                    fd.set_column(a, &((p(&s.xi + &e) - p(&s.xi - &e)) / (2.0 * h)));
                }
                assert!((&k.jacobian - &fd).norm() <= 1e-5 * (1.0 + fd.norm()));
                let j_at = |xi: DVector<f64>| {
                    plant.point_kinematics(&PlantState::at_rest(xi), &frame).unwrap().jacobian
                };
                let jd_fd = (j_at(&s.xi + h * &s.zeta) - j_at(&s.xi - h * &s.zeta)) / (2.0 * h);
                assert!((&k.jacobian_dot - &jd_fd).norm() <= 1e-5 * (1.0 + jd_fd.norm()));
            }
        }
    }

    #[test]
    fn actuation_measure_of_orthonormal_and_rank_deficient_b() {
        let di = Plant::double_integrator(4).unwrap();
        assert_eq!(di.actuation_measure(&PlantState::at_rest(DVector::zeros(4))), 1.0);

        // Two identical thrusters on a one-link body with no joints: B is 3×2, rank ≤ 2.
        let params = SnakeParams {
            link_lengths: vec![1.0],
            link_masses: vec![1.0],
            link_inertias: vec![0.1],
            damping: vec![0.0; 3],
            gravity: 0.0,
            thrusters: vec![
                Thruster { link: 0, offset: 0.5, angle: 0.3 },
                Thruster { link: 0, offset: 0.5, angle: 0.3 },
            ],
        };
        let plant = Plant::snake(params).unwrap();
        let v = plant.actuation_measure(&PlantState::at_rest(DVector::zeros(3)));
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn actuation_measure_regression_at_reference_configuration() {
        let plant = snake();
        let s = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.1, 0.1]));
        let v = plant.actuation_measure(&s);
        let b = plant.actuation_matrix(&s.xi);
        let direct = (&b * b.transpose()).determinant();
        assert!((v - direct).abs() < 1e-14);
        assert!((v - REFERENCE_ACTUATION_MEASURE).abs() < 1e-12, "value {v:.17}");
    }

    /// `det(B Bᵀ)` of the default snake at `θ = (0.1, 0.1)`, from direct evaluation.
    const REFERENCE_ACTUATION_MEASURE: f64 = 1.991_260_432_391_623_6;

    #[test]
    fn actuation_measure_is_invariant_to_base_pose() {
        let plant = snake();
        let a = plant.actuation_measure(&PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.3, -0.2])));
        let b = plant.actuation_measure(&PlantState::at_rest(DVector::from_column_slice(&[1.0, -2.0, 1.1, 0.3, -0.2])));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn actuation_gradient_and_curvature_match_finite_differences() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for _ in 0..20 {
            let s = random_state(&mut rng, 5);
            let d = plant.actuation_derivatives(&s).unwrap();
            let f = |xi: DVector<f64>| plant.actuation_measure(&PlantState::at_rest(xi));
            for a in 0..5 {
                let mut e = DVector::zeros(5);
                e[a] = h;
                let fd = (f(&s.xi + &e) - f(&s.xi - &e)) / (2.0 * h);
                assert!((d.gradient[a] - fd).abs() <= 1e-4 * (1.0 + fd.abs()));
            }
            let fd2 = (f(&s.xi + h * &s.zeta) - 2.0 * f(s.xi.clone()) + f(&s.xi - h * &s.zeta)) / (h * h);
            assert!((d.curvature - fd2).abs() <= 1e-4 * (1.0 + fd2.abs()), "{} vs {}", d.curvature, fd2);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = SnakeParams::three_link();
        p.link_lengths[1] = 0.0;
        assert!(Plant::snake(p).is_err());
        let mut p = SnakeParams::three_link();
        p.link_masses[0] = -1.0;
        assert!(Plant::snake(p).is_err());
        let mut p = SnakeParams::three_link();
        p.thrusters[0].link = 5;
        assert!(Plant::snake(p).is_err());
        assert!(Plant::double_integrator(0).is_err());
    }
}
