//! Equality and set-based tasks and their input-output data.
//!
//! An equality task with output `y` and relative degree `ρ` exposes the
//! transverse state `η = (y, …, y^(ρ−1))` and the affine map
//! `y^(ρ) = A u + b`. A set task with barrier `h` and relative degree `r`
//! exposes `η_b = (h, …, h^(r−1))` and `h^(r) = a·u + b`. Both are computed
//! analytically from the plant's kinematics and the factorized dynamics.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{check_dim, Error, Result};
use crate::model::{DynamicsTerms, Frame, Plant, PlantKind, PlantState};

/// Piecewise-constant reference: each entry holds from its start time until the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    points: Vec<(f64, DVector<f64>)>,
}

impl Schedule {
    pub fn constant(value: DVector<f64>) -> Self {
        Self {
            points: vec![(f64::NEG_INFINITY, value)],
        }
    }

    /// Entries must have strictly increasing start times and a common dimension.
    pub fn piecewise(mut points: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidTask("schedule needs at least one entry".into()));
        }
        let dim = points[0].1.len();
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidTask("schedule times must increase".into()));
            }
        }
        if points.iter().any(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidTask("schedule entries differ in dimension".into()));
        }
        // The first entry also covers times before its start.
        points[0].0 = f64::NEG_INFINITY;
        Ok(Self { points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].1.len()
    }

    pub fn value_at(&self, t: f64) -> &DVector<f64> {
        let idx = self.points.partition_point(|(start, _)| *start <= t);
        &self.points[idx.saturating_sub(1)].1
    }

    pub fn entries(&self) -> &[(f64, DVector<f64>)] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EqualityKind {
    /// `y = p(q) − p_d(t)`, relative degree two.
    Position { frame: Frame, reference: Schedule },
    /// `y = ζ_sel − ζ_d`, relative degree one.
    Velocity {
        selector: Vec<usize>,
        target: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityTask {
    pub name: String,
    pub kind: EqualityKind,
    rho: usize,
    dim: usize,
}

/// Everything one equality task contributes at one state.
#[derive(Debug, Clone)]
pub struct EqualityEval {
    pub y: DVector<f64>,
    pub eta: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl EqualityTask {
    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output(&self, plant: &Plant, state: &PlantState) -> Result<DVector<f64>> {
        match &self.kind {
            EqualityKind::Position { frame, reference } => {
                let k = plant.point_kinematics(state, frame)?;
                Ok(k.position - reference.value_at(state.t))
            }
            EqualityKind::Velocity { selector, target } => {
                Ok(DVector::from_iterator(selector.len(), selector.iter().map(|&i| state.zeta[i])) - target)
            }
        }
    }

    pub fn transverse(&self, plant: &Plant, state: &PlantState) -> Result<DVector<f64>> {
        match &self.kind {
            EqualityKind::Position { frame, reference } => {
                let k = plant.point_kinematics(state, frame)?;
                let y = k.position - reference.value_at(state.t);
                let y_dot = &k.jacobian * &state.zeta;
                Ok(stack(&y, &y_dot))
            }
            EqualityKind::Velocity { .. } => self.output(plant, state),
        }
    }

    /// `(A, b)` with `y^(ρ) = A u + b`.
    pub fn io_data(
        &self,
        plant: &Plant,
        state: &PlantState,
        dynamics: &DynamicsTerms,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let e = self.evaluate(plant, state, dynamics)?;
        Ok((e.a, e.b))
    }

    pub fn evaluate(
        &self,
        plant: &Plant,
        state: &PlantState,
        dynamics: &DynamicsTerms,
    ) -> Result<EqualityEval> {
        match &self.kind {
            EqualityKind::Position { frame, reference } => {
                let k = plant.point_kinematics(state, frame)?;
                let y = &k.position - reference.value_at(state.t);
                let y_dot = &k.jacobian * &state.zeta;
                let a = &k.jacobian * &dynamics.minv_b;
                let b = &k.jacobian * &dynamics.drift + &k.jacobian_dot * &state.zeta;
                Ok(EqualityEval {
                    eta: stack(&y, &y_dot),
                    y,
                    a,
                    b,
                })
            }
            EqualityKind::Velocity { selector, target } => {
                let y = DVector::from_iterator(selector.len(), selector.iter().map(|&i| state.zeta[i]))
                    - target;
                let a = dynamics.minv_b.select_rows(selector.iter());
                let b = DVector::from_iterator(selector.len(), selector.iter().map(|&i| dynamics.drift[i]));
                Ok(EqualityEval {
                    eta: y.clone(),
                    y,
                    a,
                    b,
                })
            }
        }
    }
}

fn stack(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(top.len() + bottom.len(), top.iter().chain(bottom.iter()).copied())
}

/// Position task with a constant target.
pub fn make_position_task(
    plant: &Plant,
    name: &str,
    frame: Frame,
    target: DVector<f64>,
) -> Result<EqualityTask> {
    make_position_task_scheduled(plant, name, frame, Schedule::constant(target))
}

pub fn make_position_task_scheduled(
    plant: &Plant,
    name: &str,
    frame: Frame,
    reference: Schedule,
) -> Result<EqualityTask> {
    let probe = PlantState::at_rest(DVector::zeros(plant.dof()));
    let dim = plant.point_kinematics(&probe, &frame)?.position.len();
    check_dim("position target", dim, reference.dim())?;
    Ok(EqualityTask {
        name: name.to_string(),
        kind: EqualityKind::Position { frame, reference },
        rho: 2,
        dim,
    })
}

/// Velocity regulation of the selected coordinates towards `target`.
pub fn make_velocity_task(
    plant: &Plant,
    name: &str,
    selector: Vec<usize>,
    target: Option<DVector<f64>>,
) -> Result<EqualityTask> {
    if selector.is_empty() {
        return Err(Error::InvalidTask("velocity task selects no coordinates".into()));
    }
    if let Some(&bad) = selector.iter().find(|&&i| i >= plant.dof()) {
        return Err(Error::InvalidTask(format!("velocity selector index {bad} out of range")));
    }
    let dim = selector.len();
    let target = target.unwrap_or_else(|| DVector::zeros(dim));
    check_dim("velocity target", dim, target.len())?;
    Ok(EqualityTask {
        name: name.to_string(),
        kind: EqualityKind::Velocity { selector, target },
        rho: 1,
        dim,
    })
}

/// Imaginary part of the quaternion error `q_d ⊗ q*`, with quaternions
/// given scalar-first as `(η, ε)`.
///
/// The formula is applied literally; `q_d = −q` describes the same physical
/// orientation and yields a zero error just like `q_d = q`.
pub fn quaternion_error(q_d: [f64; 4], q: [f64; 4]) -> Result<Vector3<f64>> {
    for quat in [&q_d, &q] {
        let norm = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitQuaternion { norm });
        }
    }
    let (eta_d, eps_d) = (q_d[0], Vector3::new(q_d[1], q_d[2], q_d[3]));
    let (eta, eps) = (q[0], Vector3::new(q[1], q[2], q[3]));
    Ok(eta * eps_d - eta_d * eps + eps.cross(&eps_d))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    /// `h = ‖p_obs − p‖ − (r_obs + d_margin)`.
    Obstacle {
        frame: Frame,
        center: DVector<f64>,
        radius: f64,
        margin: f64,
    },
    /// `h = q_i − bound`.
    CoordinateLower { index: usize, bound: f64 },
    /// `h = bound − q_i`.
    CoordinateUpper { index: usize, bound: f64 },
    /// `h = ζ_i − bound`, relative degree one.
    VelocityLower { index: usize, bound: f64 },
    /// `h = bound − ζ_i`, relative degree one.
    VelocityUpper { index: usize, bound: f64 },
    /// `h = det(B Bᵀ) − σ_b,min`.
    Actuation { sigma_min: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetTask {
    pub name: String,
    pub kind: SetKind,
    r: usize,
}

#[derive(Debug, Clone)]
pub struct SetEval {
    pub h: f64,
    pub eta_b: DVector<f64>,
    pub a_row: DVector<f64>,
    pub b: f64,
}

impl SetTask {
    pub fn relative_degree(&self) -> usize {
        self.r
    }

    pub fn h(&self, plant: &Plant, state: &PlantState) -> Result<f64> {
        match &self.kind {
            SetKind::Obstacle {
                frame,
                center,
                radius,
                margin,
            } => {
                let k = plant.point_kinematics(state, frame)?;
                let dist = (&k.position - center).norm();
                Ok(dist - (radius + margin))
            }
            SetKind::CoordinateLower { index, bound } => Ok(state.xi[*index] - bound),
            SetKind::CoordinateUpper { index, bound } => Ok(bound - state.xi[*index]),
            SetKind::VelocityLower { index, bound } => Ok(state.zeta[*index] - bound),
            SetKind::VelocityUpper { index, bound } => Ok(bound - state.zeta[*index]),
            SetKind::Actuation { sigma_min } => Ok(plant.actuation_measure(state) - sigma_min),
        }
    }

    /// The underlying monitored quantity for a barrier value `h`: the
    /// distance for obstacles, the coordinate or velocity for limits and
    /// `det(B Bᵀ)` for the actuation floor.
    pub fn sigma(&self, h: f64) -> f64 {
        match &self.kind {
            SetKind::Obstacle { radius, margin, .. } => h + radius + margin,
            SetKind::CoordinateLower { bound, .. } | SetKind::VelocityLower { bound, .. } => h + bound,
            SetKind::CoordinateUpper { bound, .. } | SetKind::VelocityUpper { bound, .. } => bound - h,
            SetKind::Actuation { sigma_min } => h + sigma_min,
        }
    }

    pub fn eta_b(&self, plant: &Plant, state: &PlantState, dynamics: &DynamicsTerms) -> Result<DVector<f64>> {
        Ok(self.evaluate(plant, state, dynamics)?.eta_b)
    }

    /// `(a_row, b)` with `h^(r) = b + a_row·u`.
    pub fn io_data(
        &self,
        plant: &Plant,
        state: &PlantState,
        dynamics: &DynamicsTerms,
    ) -> Result<(DVector<f64>, f64)> {
        let e = self.evaluate(plant, state, dynamics)?;
        Ok((e.a_row, e.b))
    }

    pub fn evaluate(
        &self,
        plant: &Plant,
        state: &PlantState,
        dynamics: &DynamicsTerms,
    ) -> Result<SetEval> {
        let row = |i: usize| dynamics.minv_b.row(i).transpose();
        let eval = match &self.kind {
            SetKind::Obstacle {
                frame,
                center,
                radius,
                margin,
            } => {
                let k = plant.point_kinematics(state, frame)?;
                let d = &k.position - center;
                let dist = d.norm();
                if dist < 1e-12 {
                    return Err(Error::DegenerateDistance);
                }
                let n = d / dist;
                let p_dot = &k.jacobian * &state.zeta;
                let radial = n.dot(&p_dot);
                let a_row = (n.transpose() * &k.jacobian * &dynamics.minv_b).transpose();
                let b = n.dot(&(&k.jacobian * &dynamics.drift + &k.jacobian_dot * &state.zeta))
                    + (p_dot.norm_squared() - radial * radial) / dist;
                let h = dist - (radius + margin);
                SetEval {
                    h,
                    eta_b: DVector::from_column_slice(&[h, radial]),
                    a_row,
                    b,
                }
            }
            SetKind::CoordinateLower { index, bound } => SetEval {
                h: state.xi[*index] - bound,
                eta_b: DVector::from_column_slice(&[state.xi[*index] - bound, state.zeta[*index]]),
                a_row: row(*index),
                b: dynamics.drift[*index],
            },
            SetKind::CoordinateUpper { index, bound } => SetEval {
                h: bound - state.xi[*index],
                eta_b: DVector::from_column_slice(&[bound - state.xi[*index], -state.zeta[*index]]),
                a_row: -row(*index),
                b: -dynamics.drift[*index],
            },
            SetKind::VelocityLower { index, bound } => SetEval {
                h: state.zeta[*index] - bound,
                eta_b: DVector::from_element(1, state.zeta[*index] - bound),
                a_row: row(*index),
                b: dynamics.drift[*index],
            },
            SetKind::VelocityUpper { index, bound } => SetEval {
                h: bound - state.zeta[*index],
                eta_b: DVector::from_element(1, bound - state.zeta[*index]),
                a_row: -row(*index),
                b: -dynamics.drift[*index],
            },
            SetKind::Actuation { sigma_min } => {
                let d = plant.actuation_derivatives(state)?;
                let h = d.value - sigma_min;
                let rate = d.gradient.dot(&state.zeta);
                SetEval {
                    h,
                    eta_b: DVector::from_column_slice(&[h, rate]),
                    a_row: (d.gradient.transpose() * &dynamics.minv_b).transpose(),
                    b: d.curvature + d.gradient.dot(&dynamics.drift),
                }
            }
        };
        Ok(eval)
    }
}

pub fn make_obstacle_task(
    plant: &Plant,
    name: &str,
    frame: Frame,
    center: DVector<f64>,
    r_obs: f64,
    d_margin: f64,
) -> Result<SetTask> {
    if !(r_obs > 0.0) || !r_obs.is_finite() {
        return Err(Error::InvalidTask(format!("obstacle radius must be > 0, got {r_obs}")));
    }
    if !(d_margin >= 0.0) || !d_margin.is_finite() {
        return Err(Error::InvalidTask(format!("obstacle margin must be >= 0, got {d_margin}")));
    }
    let probe = PlantState::at_rest(DVector::zeros(plant.dof()));
    let dim = plant.point_kinematics(&probe, &frame)?.position.len();
    check_dim("obstacle center", dim, center.len())?;
    Ok(SetTask {
        name: name.to_string(),
        kind: SetKind::Obstacle {
            frame,
            center,
            radius: r_obs,
            margin: d_margin,
        },
        r: 2,
    })
}

/// Lower and upper limit tasks for every revolute joint: the `n` lower
/// limits first, then the `n` upper limits.
pub fn make_joint_limit_tasks(
    plant: &Plant,
    name: &str,
    theta_min: &DVector<f64>,
    theta_max: &DVector<f64>,
) -> Result<Vec<SetTask>> {
    let joints = plant.joint_indices();
    if joints.is_empty() {
        return Err(Error::InvalidLimits("plant has no revolute joints".into()));
    }
    make_coordinate_limit_tasks(plant, name, &joints, theta_min, theta_max)
}

/// Lower/upper limit tasks on arbitrary configuration coordinates.
pub fn make_coordinate_limit_tasks(
    plant: &Plant,
    name: &str,
    indices: &[usize],
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<Vec<SetTask>> {
    if lower.len() != indices.len() || upper.len() != indices.len() {
        return Err(Error::InvalidLimits(format!(
            "expected {} lower and upper limits, got {} and {}",
            indices.len(),
            lower.len(),
            upper.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= plant.dof()) {
        return Err(Error::InvalidLimits(format!("coordinate {bad} out of range")));
    }
    for (j, (lo, hi)) in lower.iter().zip(upper.iter()).enumerate() {
        if !(lo < hi) {
            return Err(Error::InvalidLimits(format!(
                "limit {j}: minimum {lo} is not below maximum {hi}"
            )));
        }
    }
    let mut tasks: Vec<SetTask> = indices
        .iter()
        .zip(lower.iter())
        .enumerate()
        .map(|(j, (&index, &bound))| SetTask {
            name: format!("{name}.lower{}", j + 1),
            kind: SetKind::CoordinateLower { index, bound },
            r: 2,
        })
        .collect();
    tasks.extend(indices.iter().zip(upper.iter()).enumerate().map(|(j, (&index, &bound))| SetTask {
        name: format!("{name}.upper{}", j + 1),
        kind: SetKind::CoordinateUpper { index, bound },
        r: 2,
    }));
    Ok(tasks)
}

/// Single lower bound `h = q_i − bound`.
pub fn make_coordinate_lower_task(plant: &Plant, name: &str, index: usize, bound: f64) -> Result<SetTask> {
    if index >= plant.dof() {
        return Err(Error::InvalidTask(format!("coordinate {index} out of range")));
    }
    Ok(SetTask {
        name: name.to_string(),
        kind: SetKind::CoordinateLower { index, bound },
        r: 2,
    })
}

/// Velocity bound of relative degree one; `upper` selects `h = bound − ζ_i`.
pub fn make_velocity_bound_task(
    plant: &Plant,
    name: &str,
    index: usize,
    bound: f64,
    upper: bool,
) -> Result<SetTask> {
    if index >= plant.dof() {
        return Err(Error::InvalidTask(format!("coordinate {index} out of range")));
    }
    let kind = if upper {
        SetKind::VelocityUpper { index, bound }
    } else {
        SetKind::VelocityLower { index, bound }
    };
    Ok(SetTask {
        name: name.to_string(),
        kind,
        r: 1,
    })
}

pub fn make_actuation_task(plant: &Plant, name: &str, sigma_b_min: f64) -> Result<SetTask> {
    if !(sigma_b_min >= 0.0) || !sigma_b_min.is_finite() {
        return Err(Error::InvalidTask(format!("sigma_b_min must be >= 0, got {sigma_b_min}")));
    }
    if matches!(plant.kind(), PlantKind::PlanarSnake(p) if p.thrusters.is_empty() && p.joints() == 0) {
        return Err(Error::InvalidTask("plant has no actuators".into()));
    }
    Ok(SetTask {
        name: name.to_string(),
        kind: SetKind::Actuation {
            sigma_min: sigma_b_min,
        },
        r: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SnakeParams;
    use crate::oracles;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_3, SQRT_2};

    fn snake() -> Plant {
        Plant::snake(SnakeParams::three_link()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> PlantState {
        let xi = DVector::from_fn(5, |i, _| if i < 3 { rng.random_range(-1.0..1.0) } else { rng.random_range(-0.8..0.8) });
        let zeta = DVector::from_fn(5, |_, _| rng.random_range(-0.7..0.7));
        PlantState::new(xi, zeta, 0.0)
    }

    fn random_input(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
        DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0))
    }

    /// Flow of the plant under a held input, used by the finite-difference oracle.
    fn flow<'a>(plant: &'a Plant, u: &'a DVector<f64>) -> impl Fn(&PlantState, f64) -> PlantState + 'a {
        move |s: &PlantState, dt: f64| {
            oracles::rk4_flow(s, dt, 16, |xi, zeta, t| {
                plant
                    .forward_dynamics(&PlantState::new(xi.clone(), zeta.clone(), t), u)
                    .unwrap()
            })
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    #[test]
    fn identity_position_task_on_target_has_zero_error() {
        let plant = Plant::double_integrator(2).unwrap();
        let state = PlantState::new(DVector::from_column_slice(&[0.4, -1.0]), DVector::zeros(2), 0.0);
        let task = make_position_task(&plant, "p", Frame::Identity, state.xi.clone()).unwrap();
        assert_eq!(task.transverse(&plant, &state).unwrap(), DVector::zeros(4));
        assert_eq!(task.rho(), 2);
    }

    #[test]
    fn double_integrator_position_io_data() {
        let plant = Plant::double_integrator(2).unwrap();
        let state = PlantState::at_rest(DVector::from_column_slice(&[1.0, 0.0]));
        let task = make_position_task(&plant, "p", Frame::Identity, DVector::zeros(2)).unwrap();
        let dynamics = plant.dynamics_terms(&state).unwrap();
        let (a, b) = task.io_data(&plant, &state, &dynamics).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(b, DVector::zeros(2));
        assert_eq!(task.output(&plant, &state).unwrap(), DVector::from_column_slice(&[1.0, 0.0]));
    }

    #[test]
    fn double_integrator_velocity_task() {
        let plant = Plant::double_integrator(2).unwrap();
        let state = PlantState::at_rest(DVector::from_column_slice(&[1.0, 2.0]));
        let task = make_velocity_task(&plant, "v", vec![0, 1], None).unwrap();
        let dynamics = plant.dynamics_terms(&state).unwrap();
        assert_eq!(task.transverse(&plant, &state).unwrap(), DVector::zeros(2));
        let (a, b) = task.io_data(&plant, &state, &dynamics).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(b, DVector::zeros(2));
        assert_eq!(task.rho(), 1);
    }

    #[test]
    fn schedule_is_piecewise_constant() {
        let s = Schedule::piecewise(vec![
            (0.0, DVector::from_element(1, 1.0)),
            (5.0, DVector::from_element(1, 2.0)),
        ])
        .unwrap();
        assert_eq!(s.value_at(-1.0)[0], 1.0);
        assert_eq!(s.value_at(4.999)[0], 1.0);
        assert_eq!(s.value_at(5.0)[0], 2.0);
        assert_eq!(s.value_at(100.0)[0], 2.0);
        assert!(Schedule::piecewise(vec![
            (1.0, DVector::from_element(1, 1.0)),
            (1.0, DVector::from_element(1, 2.0)),
        ])
        .is_err());
    }

    #[test]
    fn snake_end_effector_task_matches_finite_difference_oracle() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let task = make_position_task(&plant, "ee", Frame::EndEffector, DVector::from_column_slice(&[1.0, 0.5])).unwrap();
        for _ in 0..10 {
            let s = random_state(&mut rng);
            let u = random_input(&mut rng, plant.inputs());
            let dynamics = plant.dynamics_terms(&s).unwrap();
            let e = task.evaluate(&plant, &s, &dynamics).unwrap();
            let predicted = &e.a * &u + &e.b;
            for i in 0..2 {
                let out = |st: &PlantState| task.output(&plant, st).unwrap()[i];
                let fd = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 2, 1e-4);
                assert!(rel_err(predicted[i], fd) <= 1e-4, "{} vs {}", predicted[i], fd);
                let fd1 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 1, 1e-6);
                assert!(rel_err(e.eta[2 + i], fd1) <= 1e-6);
            }
        }
    }

    #[test]
    fn snake_joint_velocity_task_matches_finite_difference_oracle() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let task = make_velocity_task(&plant, "joints", vec![3, 4], None).unwrap();
        for _ in 0..10 {
            let s = random_state(&mut rng);
            let u = random_input(&mut rng, plant.inputs());
            let dynamics = plant.dynamics_terms(&s).unwrap();
            let (a, b) = task.io_data(&plant, &s, &dynamics).unwrap();
            let predicted = a * &u + b;
            for i in 0..2 {
                let out = |st: &PlantState| task.output(&plant, st).unwrap()[i];
                let fd = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 1, 1e-6);
                assert!(rel_err(predicted[i], fd) <= 1e-6);
            }
        }
    }

    #[test]
    fn quaternion_error_examples() {
        let q = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(quaternion_error(q, q).unwrap(), Vector3::zeros());
        let h = SQRT_2 / 2.0;
        let e = quaternion_error([h, 0.0, 0.0, h], q).unwrap();
        assert!((e - Vector3::new(0.0, 0.0, h)).norm() < 1e-15);
        let q = [0.5, 0.5, -0.5, 0.5];
        let neg = q.map(|v| -v);
        assert!(quaternion_error(neg, q).unwrap().norm() < 1e-15);
        assert!(matches!(
            quaternion_error([1.0, 0.1, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
            Err(Error::NonUnitQuaternion { .. })
        ));
    }

    proptest! {
        #[test]
        fn quaternion_error_vanishes_for_identical_orientations(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0
        ) {
            let n = (a * a + b * b + c * c + d * d).sqrt();
            prop_assume!(n > 1e-3);
            let q = [a / n, b / n, c / n, d / n];
            prop_assert!(quaternion_error(q, q).unwrap().norm() < 1e-15);
        }

        #[test]
        fn joint_limit_pairs_sum_to_range(theta in -1.0f64..1.0, t2 in -1.0f64..1.0) {
            let plant = snake();
            let lo = DVector::from_column_slice(&[-FRAC_PI_3, -0.5]);
            let hi = DVector::from_column_slice(&[FRAC_PI_3, 0.9]);
            let tasks = make_joint_limit_tasks(&plant, "jl", &lo, &hi).unwrap();
            let s = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, theta, t2]));
            for j in 0..2 {
                let sum = tasks[j].h(&plant, &s).unwrap() + tasks[j + 2].h(&plant, &s).unwrap();
                prop_assert!((sum - (hi[j] - lo[j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn obstacle_task_values() {
        let plant = Plant::double_integrator(2).unwrap();
        let task = make_obstacle_task(&plant, "obs", Frame::Identity, DVector::zeros(2), 0.5, 0.1).unwrap();
        let far = PlantState::at_rest(DVector::from_column_slice(&[1.6, 0.0]));
        assert!((task.h(&plant, &far).unwrap() - 1.0).abs() < 1e-15);
        let boundary = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.6]));
        assert!(task.h(&plant, &boundary).unwrap().abs() < 1e-15);
        let center = PlantState::at_rest(DVector::zeros(2));
        let dynamics = plant.dynamics_terms(&center).unwrap();
        assert_eq!(task.evaluate(&plant, &center, &dynamics).unwrap_err(), Error::DegenerateDistance);
        assert!(make_obstacle_task(&plant, "o", Frame::Identity, DVector::zeros(2), 0.0, 0.1).is_err());
        assert!(make_obstacle_task(&plant, "o", Frame::Identity, DVector::zeros(2), 1.0, -0.1).is_err());
    }

    #[test]
    fn obstacle_task_matches_finite_difference_oracle() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let task = make_obstacle_task(&plant, "obs", Frame::EndEffector, DVector::from_column_slice(&[2.0, 1.0]), 0.3, 0.05).unwrap();
        for _ in 0..10 {
            let s = random_state(&mut rng);
            let u = random_input(&mut rng, plant.inputs());
            let dynamics = plant.dynamics_terms(&s).unwrap();
            let e = task.evaluate(&plant, &s, &dynamics).unwrap();
            let out = |st: &PlantState| task.h(&plant, st).unwrap();
            let fd1 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 1, 1e-6);
            let fd2 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 2, 1e-4);
            assert!(rel_err(e.eta_b[1], fd1) <= 1e-6);
            assert!(rel_err(e.a_row.dot(&u) + e.b, fd2) <= 1e-4);
        }
    }

    #[test]
    fn joint_limit_values() {
        let plant = snake();
        let lo = DVector::from_element(2, -FRAC_PI_3);
        let hi = DVector::from_element(2, FRAC_PI_3);
        let tasks = make_joint_limit_tasks(&plant, "jl", &lo, &hi).unwrap();
        assert_eq!(tasks.len(), 4);
        let at_min = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, -FRAC_PI_3, 0.2]));
        assert_eq!(tasks[0].h(&plant, &at_min).unwrap(), 0.0);
        let mid = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.0]));
        assert!((tasks[1].h(&plant, &mid).unwrap() - FRAC_PI_3).abs() < 1e-15);
        let theta = 0.25;
        let s = PlantState::at_rest(DVector::from_column_slice(&[0.0, 0.0, 0.0, theta, 0.0]));
        assert!((tasks[0].h(&plant, &s).unwrap() - (theta + FRAC_PI_3)).abs() < 1e-15);
        assert!((tasks[2].h(&plant, &s).unwrap() - (FRAC_PI_3 - theta)).abs() < 1e-15);
        assert!(matches!(
            make_joint_limit_tasks(&plant, "jl", &hi, &lo),
            Err(Error::InvalidLimits(_))
        ));
        let di = Plant::double_integrator(2).unwrap();
        assert!(make_joint_limit_tasks(&di, "jl", &lo, &hi).is_err());
    }

    #[test]
    fn joint_limit_tasks_match_finite_difference_oracle() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tasks = make_joint_limit_tasks(&plant, "jl", &DVector::from_element(2, -1.0), &DVector::from_element(2, 1.0)).unwrap();
        let s = random_state(&mut rng);
        let u = random_input(&mut rng, plant.inputs());
        let dynamics = plant.dynamics_terms(&s).unwrap();
        for task in &tasks {
            let e = task.evaluate(&plant, &s, &dynamics).unwrap();
            let out = |st: &PlantState| task.h(&plant, st).unwrap();
            let fd2 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 2, 1e-4);
            assert!(rel_err(e.a_row.dot(&u) + e.b, fd2) <= 1e-4);
        }
    }

    #[test]
    fn actuation_task_floor_and_constant_b() {
        let di = Plant::double_integrator(2).unwrap();
        let task = make_actuation_task(&di, "act", 0.1).unwrap();
        let s = PlantState::new(DVector::from_column_slice(&[0.3, 0.2]), DVector::from_column_slice(&[1.0, -1.0]), 0.0);
        let dynamics = di.dynamics_terms(&s).unwrap();
        let e = task.evaluate(&di, &s, &dynamics).unwrap();
        assert!((e.h - 0.9).abs() < 1e-15);
        assert_eq!(e.a_row, DVector::zeros(2));
        assert_eq!(e.b, 0.0);
    }

    #[test]
    fn actuation_task_matches_finite_difference_oracle() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let task = make_actuation_task(&plant, "act", 0.1).unwrap();
        for _ in 0..10 {
            let s = random_state(&mut rng);
            let u = random_input(&mut rng, plant.inputs());
            let dynamics = plant.dynamics_terms(&s).unwrap();
            let e = task.evaluate(&plant, &s, &dynamics).unwrap();
            let out = |st: &PlantState| task.h(&plant, st).unwrap();
            let fd1 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 1, 1e-6);
            let fd2 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 2, 1e-4);
            assert!(rel_err(e.eta_b[1], fd1) <= 1e-6);
            assert!(rel_err(e.a_row.dot(&u) + e.b, fd2) <= 1e-4, "{} vs {}", e.a_row.dot(&u) + e.b, fd2);
        }
    }

    #[test]
    fn velocity_bound_task_has_relative_degree_one() {
        let plant = snake();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let task = make_velocity_bound_task(&plant, "vmax", 3, 0.5, true).unwrap();
        assert_eq!(task.relative_degree(), 1);
        let s = random_state(&mut rng);
        let u = random_input(&mut rng, plant.inputs());
        let dynamics = plant.dynamics_terms(&s).unwrap();
        let e = task.evaluate(&plant, &s, &dynamics).unwrap();
        let out = |st: &PlantState| task.h(&plant, st).unwrap();
        let fd1 = oracles::fd_time_derivative(&s, &flow(&plant, &u), &out, 1, 1e-6);
        assert!(rel_err(e.a_row.dot(&u) + e.b, fd1) <= 1e-6);
    }
}
