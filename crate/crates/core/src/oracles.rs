//! Brute-force reference implementations used to cross-check the
//! production code.
//!
//! This module deliberately shares no algorithms with the rest of the crate:
//! it may name the crate's plain data types (problem and state containers)
//! but never calls a production solver, synthesizer or plant routine. A unit
//! test below enforces the rule by inspecting this file's imports. The
//! oracles are slow (the QP oracle is exponential in the number of rows) and
//! favor obviousness over efficiency.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::PlantState;
use crate::qpsolver::{KktResiduals, QpDuals, QpProblem, QpSolution, QpStatus};

/// Comparison of one quantity between an oracle and the implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: String,
    pub reference: f64,
    pub implementation: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
}

impl OracleReport {
    pub fn new(quantity: impl Into<String>, reference: f64, implementation: f64) -> Self {
        let abs_gap = (reference - implementation).abs();
        Self {
            quantity: quantity.into(),
            reference,
            implementation,
            abs_gap,
            rel_gap: abs_gap / (1.0 + reference.abs()),
        }
    }

    pub fn within(&self, abs_tol: f64) -> bool {
        self.abs_gap.is_finite() && self.abs_gap <= abs_tol
    }
}

/// Largest number of rows (general rows plus finite bounds) the QP oracle
/// will enumerate.
pub const QP_ORACLE_MAX_ROWS: usize = 32;

/// Exact QP optimum by active-set enumeration.
///
/// Every candidate active set yields an equality-constrained KKT system,
/// solved in the least-squares sense when singular. The first candidate that
/// is consistent, primal feasible and dual feasible is a global optimum
/// because the problem is convex; if none is, the problem is infeasible.
pub fn qp_oracle(problem: &QpProblem) -> Result<QpSolution> {
    let n = problem.c.len();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..problem.h_ineq.len() {
        rows.push((problem.g_ineq.row(i).transpose(), problem.h_ineq[i]));
    }
    let general = rows.len();
    let mut bound_index = Vec::new();
    if let Some(lb) = &problem.lb {
        for j in 0..n {
            if lb[j].is_finite() {
                let mut g = DVector::zeros(n);
                g[j] = -1.0;
                rows.push((g, -lb[j]));
                bound_index.push((j, false));
            }
        }
    }
    if let Some(ub) = &problem.ub {
        for j in 0..n {
            if ub[j].is_finite() {
                let mut g = DVector::zeros(n);
                g[j] = 1.0;
                rows.push((g, ub[j]));
                bound_index.push((j, true));
            }
        }
    }
    let total = rows.len();
    if total > QP_ORACLE_MAX_ROWS {
        return Err(Error::TooManyRows {
            rows: total,
            max: QP_ORACLE_MAX_ROWS,
        });
    }

    // Rows are visited in order of increasing slack at a rough estimate of
    // the optimum. The order only decides how soon the certified optimum is
    // reached: every subset is still eligible, and acceptance rests on the
    // KKT conditions alone.
    let estimate = admm_estimate(problem, &rows);
    let mut order: Vec<usize> = (0..total).collect();
    let slack = |i: usize| (rows[i].1 - rows[i].0.dot(&estimate)) / rows[i].0.norm().max(1e-300);
    order.sort_by(|&a, &b| slack(a).partial_cmp(&slack(b)).unwrap_or(std::cmp::Ordering::Equal));

    let tol = 1e-9;
    // A KKT multiplier supported on linearly independent gradients always
    // exists, so active sets larger than n need not be visited.
    if let Some(found) = accept(problem, &rows, &[], general, &bound_index, tol) {
        return Ok(found);
    }
    // Each subset is enumerated exactly once, keyed by its last row in the order.
    for last in 0..total {
        for size in 0..=last.min(n.saturating_sub(1)) {
            let mut pick: Vec<usize> = (0..size).collect();
            loop {
                let mut subset: Vec<usize> = pick.iter().map(|&i| order[i]).collect();
                subset.push(order[last]);
                if !opposite_bounds(&rows, &subset, general, problem) {
                    if let Some(found) = accept(problem, &rows, &subset, general, &bound_index, tol) {
                        return Ok(found);
                    }
                }
                if !next_combination(&mut pick, last) {
                    break;
                }
            }
        }
    }
    Ok(QpSolution {
        v: DVector::zeros(n),
        duals: QpDuals {
            ineq: DVector::zeros(general),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
        },
        objective: f64::INFINITY,
        status: QpStatus::Infeasible,
        kkt: KktResiduals::default(),
        iterations: 0,
    })
}

/// A few hundred iterations of a plain ADMM splitting, used only to rank rows.
fn admm_estimate(problem: &QpProblem, rows: &[(DVector<f64>, f64)]) -> DVector<f64> {
    let n = problem.c.len();
    let k = rows.len();
    if k == 0 {
        let ridge = &problem.hessian + DMatrix::identity(n, n) * 1e-9;
        return ridge.lu().solve(&(-&problem.c)).unwrap_or_else(|| DVector::zeros(n));
    }
    let mut a = DMatrix::zeros(k, n);
    let mut upper = DVector::zeros(k);
    for (i, (g, h)) in rows.iter().enumerate() {
        let norm = g.norm().max(1e-300);
        a.set_row(i, &(g / norm).transpose());
        upper[i] = h / norm;
    }
    let (rho, sigma) = (1.0, 1e-6);
    let lhs = &problem.hessian + DMatrix::identity(n, n) * sigma + a.transpose() * &a * rho;
    let Some(chol) = lhs.cholesky() else {
        return DVector::zeros(n);
    };
    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(k);
    let mut y = DVector::zeros(k);
    for _ in 0..400 {
        let rhs = &x * sigma - &problem.c + a.transpose() * (&z * rho - &y);
        x = chol.solve(&rhs);
        let ax = &a * &x;
        z = DVector::from_fn(k, |i, _| (ax[i] + y[i] / rho).min(upper[i]));
        y += (&ax - &z) * rho;
    }
    x
}

/// Both bounds of one coordinate can only be active together when they coincide.
fn opposite_bounds(rows: &[(DVector<f64>, f64)], subset: &[usize], general: usize, problem: &QpProblem) -> bool {
    let n = problem.c.len();
    let mut seen = vec![0u8; n];
    for &row in subset.iter().filter(|&&r| r >= general) {
        let (g, h) = &rows[row];
        let j = g.iamax();
        seen[j] += 1;
        if seen[j] > 1 {
            let lb = problem.lb.as_ref().map_or(f64::NEG_INFINITY, |v| v[j]);
            let ub = problem.ub.as_ref().map_or(f64::INFINITY, |v| v[j]);
            let _ = h;
            if lb < ub {
                return true;
            }
        }
    }
    false
}

fn accept(
    problem: &QpProblem,
    rows: &[(DVector<f64>, f64)],
    subset: &[usize],
    general: usize,
    bound_index: &[(usize, bool)],
    tol: f64,
) -> Option<QpSolution> {
    let n = problem.c.len();
    let (x, lambda) = kkt_candidate(problem, rows, subset)?;
    let feasible = rows.iter().all(|(g, h)| g.dot(&x) <= h + tol * (1.0 + h.abs()));
    let dual_ok = lambda.iter().all(|l| *l >= -tol);
    if !(feasible && dual_ok) {
        return None;
    }
    let mut duals = QpDuals {
        ineq: DVector::zeros(general),
        lower: DVector::zeros(n),
        upper: DVector::zeros(n),
    };
    for (&row, &l) in subset.iter().zip(lambda.iter()) {
        let l = l.max(0.0);
        if row < general {
            duals.ineq[row] = l;
        } else {
            let (j, upper) = bound_index[row - general];
            if upper {
                duals.upper[j] = l;
            } else {
                duals.lower[j] = l;
            }
        }
    }
    let objective = 0.5 * x.dot(&(&problem.hessian * &x)) + problem.c.dot(&x);
    Some(QpSolution {
        v: x,
        duals,
        objective,
        status: QpStatus::Optimal,
        kkt: KktResiduals::default(),
        iterations: 0,
    })
}

/// Solves `[H Gₛᵀ; Gₛ 0] (x, λ) = (−c, hₛ)`; `None` when inconsistent.
fn kkt_candidate(
    problem: &QpProblem,
    rows: &[(DVector<f64>, f64)],
    subset: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = problem.c.len();
    let m = subset.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&problem.c));
    for (r, &row) in subset.iter().enumerate() {
        let (g, h) = &rows[row];
        for j in 0..n {
            kkt[(n + r, j)] = g[j];
            kkt[(j, n + r)] = g[j];
        }
        rhs[n + r] = *h;
    }
    let scale = 1.0 + kkt.amax();
    let lu = kkt.clone().full_piv_lu();
    let pivot_min = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let sol = if pivot_min > 1e-9 * scale {
        lu.solve(&rhs)?
    } else {
        // Singular system: least-squares solution, checked for consistency below.
        kkt.clone().svd(true, true).solve(&rhs, 1e-11 * scale).ok()?
    };
    let residual = (&kkt * &sol - &rhs).amax();
    if residual > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

fn next_combination(subset: &mut [usize], total: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < total - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Random convex QP with a guaranteed feasible point.
///
/// The Hessian is `MᵀM` with `M` of random rank; when it is singular every
/// coordinate receives a finite box so the optimum exists. Otherwise each
/// coordinate independently gets a lower and/or upper bound. Rows are built
/// around a random interior point, so the feasible set has nonempty interior.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, k: usize) -> QpProblem {
    let rank = rng.random_range(0..=n + 2);
    let m = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let mut hessian = m.transpose() * m;
    hessian = 0.5 * (&hessian + hessian.transpose());
    let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
    let h = DVector::from_fn(k, |i, _| g.row(i).dot(&x0.transpose()) + rng.random_range(0.01..1.0));

    let full_box = rank < n;
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    for j in 0..n {
        if full_box || rng.random_bool(0.6) {
            lb[j] = x0[j] - rng.random_range(0.05..2.0);
        }
        if full_box || rng.random_bool(0.6) {
            ub[j] = x0[j] + rng.random_range(0.05..2.0);
        }
    }
    QpProblem {
        hessian,
        c,
        g_ineq: g,
        h_ineq: h,
        lb: Some(lb),
        ub: Some(ub),
    }
}

/// Pointwise minimum-norm input for one CLF row `l_g·u ≤ rhs`:
/// `argmin ‖u‖²` subject to the row. `None` when the row is unsatisfiable.
pub fn min_norm_oracle(l_g: &DVector<f64>, rhs: f64) -> Option<DVector<f64>> {
    if rhs >= 0.0 {
        return Some(DVector::zeros(l_g.len()));
    }
    let nn = l_g.norm_squared();
    if nn == 0.0 {
        return None;
    }
    Some(l_g * (rhs / nn))
}

/// Roots of the monic polynomial `sʳ + a_{r−1}sʳ⁻¹ + … + a₀` by the
/// Durand–Kerner simultaneous iteration. `coeffs` holds `a₀ … a_{r−1}`.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let r = coeffs.len();
    if r == 0 {
        return Vec::new();
    }
    let eval = |s: Complex<f64>| {
        let mut acc = Complex::new(1.0, 0.0);
        for a in coeffs.iter().rev() {
            acc = acc * s + a;
        }
        acc
    };
    let radius = 1.0 + coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..r).map(|i| seed.powu(i as u32) * radius).collect();
    for _ in 0..2000 {
        let mut change: f64 = 0.0;
        for i in 0..r {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..r {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            change = change.max(step.norm());
        }
        if change < 1e-15 * radius {
            break;
        }
    }
    roots
}

/// `order`-th time derivative (1 or 2) of `output` along `flow` at `x`,
/// by central differences with step `h`.
pub fn fd_time_derivative<S, F, O>(x: &S, flow: &F, output: &O, order: usize, h: f64) -> f64
where
    F: Fn(&S, f64) -> S,
    O: Fn(&S) -> f64,
{
    let fwd = output(&flow(x, h));
    let bwd = output(&flow(x, -h));
    match order {
        1 => (fwd - bwd) / (2.0 * h),
        2 => (fwd - 2.0 * output(x) + bwd) / (h * h),
        _ => panic!("finite-difference oracle supports orders 1 and 2"),
    }
}

/// Classical RK4 over `dt` (possibly negative) in `substeps` steps, for a
/// second-order system `ξ̈ = accel(ξ, ξ̇, t)`.
pub fn rk4_flow<A>(state: &PlantState, dt: f64, substeps: usize, accel: A) -> PlantState
where
    A: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64>,
{
    let h = dt / substeps as f64;
    let (mut q, mut v, mut t) = (state.xi.clone(), state.zeta.clone(), state.t);
    for _ in 0..substeps {
        let a1 = accel(&q, &v, t);
        let (q2, v2) = (&q + &v * (h / 2.0), &v + &a1 * (h / 2.0));
        let a2 = accel(&q2, &v2, t + h / 2.0);
        let (q3, v3) = (&q + &v2 * (h / 2.0), &v + &a2 * (h / 2.0));
        let a3 = accel(&q3, &v3, t + h / 2.0);
        let (q4, v4) = (&q + &v3 * h, &v + &a3 * h);
        let a4 = accel(&q4, &v4, t + h);
        q += (&v + 2.0 * &v2 + 2.0 * &v3 + &v4) * (h / 6.0);
        v += (&a1 + 2.0 * &a2 + 2.0 * &a3 + &a4) * (h / 6.0);
        t += h;
    }
    PlantState::new(q, v, t)
}

/// Independent description of a planar snake for the Lagrangian oracle.
#[derive(Debug, Clone)]
pub struct LagrangianSnake {
    pub lengths: Vec<f64>,
    pub masses: Vec<f64>,
    pub inertias: Vec<f64>,
    pub damping: Vec<f64>,
    pub gravity: f64,
    /// (link, offset along the link, angle from the link axis).
    pub thrusters: Vec<(usize, f64, f64)>,
}

impl LagrangianSnake {
    fn angles(&self, q: &DVector<f64>) -> Vec<f64> {
        let mut phi = vec![q[2]];
        for l in 1..self.lengths.len() {
            phi.push(phi[l - 1] + q[2 + l]);
        }
        phi
    }

    /// Point at distance `s` along link `l`.
    fn point(&self, q: &DVector<f64>, l: usize, s: f64) -> [f64; 2] {
        let phi = self.angles(q);
        let (mut x, mut y) = (q[0], q[1]);
        for k in 0..l {
            x += self.lengths[k] * phi[k].cos();
            y += self.lengths[k] * phi[k].sin();
        }
        [x + s * phi[l].cos(), y + s * phi[l].sin()]
    }

    fn kinetic(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let phi = self.angles(q);
        let mut phid = vec![qd[2]];
        for l in 1..self.lengths.len() {
            phid.push(phid[l - 1] + qd[2 + l]);
        }
        let (mut vx, mut vy) = (qd[0], qd[1]);
        let mut energy = 0.0;
        for l in 0..self.lengths.len() {
            let half = 0.5 * self.lengths[l];
            let (cx, cy) = (vx - half * phid[l] * phi[l].sin(), vy + half * phid[l] * phi[l].cos());
            energy += 0.5 * self.masses[l] * (cx * cx + cy * cy) + 0.5 * self.inertias[l] * phid[l] * phid[l];
            vx -= self.lengths[l] * phid[l] * phi[l].sin();
            vy += self.lengths[l] * phid[l] * phi[l].cos();
        }
        energy
    }

    fn potential(&self, q: &DVector<f64>) -> f64 {
        (0..self.lengths.len())
            .map(|l| self.masses[l] * self.gravity * self.point(q, l, 0.5 * self.lengths[l])[1])
            .sum()
    }

    /// Mass matrix recovered from the kinetic energy by polarization.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let unit = |i: usize| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        };
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 2.0 * self.kinetic(q, &unit(i));
            for j in 0..i {
                let both = unit(i) + unit(j);
                let v = self.kinetic(q, &both) - self.kinetic(q, &unit(i)) - self.kinetic(q, &unit(j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Generalized forces of the inputs, from virtual work.
    fn generalized_forces(&self, q: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = q.len();
        let h = 1e-6;
        let phi = self.angles(q);
        let mut tau = DVector::zeros(n);
        for (i, &(link, offset, angle)) in self.thrusters.iter().enumerate() {
            let dir = [(phi[link] + angle).cos(), (phi[link] + angle).sin()];
            for b in 0..n {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[b] += h;
                qm[b] -= h;
                let (pp, pm) = (self.point(&qp, link, offset), self.point(&qm, link, offset));
                let dp = [(pp[0] - pm[0]) / (2.0 * h), (pp[1] - pm[1]) / (2.0 * h)];
                tau[b] += u[i] * (dir[0] * dp[0] + dir[1] * dp[1]);
            }
        }
        for j in 0..self.lengths.len() - 1 {
            tau[3 + j] += u[self.thrusters.len() + j];
        }
        tau
    }

    /// `q̈` from the Euler–Lagrange equations, with every derivative of the
    /// energies taken by central differences.
    pub fn acceleration(&self, q: &DVector<f64>, qd: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = q.len();
        let h = 1e-5;
        let m = self.mass_matrix(q);
        let m_dot = (self.mass_matrix(&(q + qd * h)) - self.mass_matrix(&(q - qd * h))) / (2.0 * h);
        let mut dt_dq = DVector::zeros(n);
        let mut du_dq = DVector::zeros(n);
        for b in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[b] += h;
            qm[b] -= h;
            dt_dq[b] = (self.kinetic(&qp, qd) - self.kinetic(&qm, qd)) / (2.0 * h);
            du_dq[b] = (self.potential(&qp) - self.potential(&qm)) / (2.0 * h);
        }
        let damping = DVector::from_fn(n, |i, _| self.damping[i] * qd[i]);
        let rhs = self.generalized_forces(q, u) - m_dot * qd + dt_dq - damping - du_dq;
        m.lu().solve(&rhs).expect("oracle mass matrix is singular")
    }
}
