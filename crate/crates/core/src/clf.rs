//! Rapidly exponentially stabilizing control Lyapunov functions (RES-CLFs)
//! for equality tasks.
//!
//! The transverse state `η = (y, …, y^(ρ−1))` of a task with `m` outputs
//! obeys the Brunovsky chain `η̇ = Fη + Gμ` with virtual input `μ = Au + b`.
//! The CARE solution `P` of that chain, rescaled by the rate parameter `ε`,
//! gives `V_ε = ηᵀP_εη`, and the decay requirement `V̇_ε ≤ −(γ/ε)V_ε`
//! becomes one affine inequality in `u`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::tasks::EqualityEval;

/// Block Brunovsky pair `(F, G)` for `m` chains of length `ρ`, ordered
/// `η = (y, ẏ, …)` with each block of size `m`.
pub fn brunovsky(rho: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rho * m;
    let mut f = DMatrix::zeros(n, n);
    for block in 0..rho.saturating_sub(1) {
        for i in 0..m {
            f[(block * m + i, (block + 1) * m + i)] = 1.0;
        }
    }
    let mut g = DMatrix::zeros(n, m);
    for i in 0..m {
        g[((rho - 1) * m + i, i)] = 1.0;
    }
    (f, g)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Solves `XᵀP + PX + W = 0` (Lyapunov) through the Kronecker-product form.
fn lyapunov(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = x.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let xt = x.transpose();
    // vec(XᵀP) = (I ⊗ Xᵀ) vec(P), vec(PX) = (Xᵀ ⊗ I) vec(P).
    let op = id.kronecker(&xt) + xt.kronecker(&id);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let sol = op.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some(0.5 * (&p + p.transpose()))
}

fn care_residual(f: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    f.transpose() * p + p * f - p * g * g.transpose() * p + q
}

/// Stabilizing solution of `FᵀP + PF − PGGᵀP + Q = 0` by Kleinman–Newton.
///
/// The iteration starts from the gain that places every closed-loop pole of
/// each chain at `s = −1`, which is stabilizing for Brunovsky pairs.
pub fn solve_care(f: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let m = g.ncols();
    check_dim("CARE F columns", n, f.ncols())?;
    check_dim("CARE G rows", n, g.nrows())?;
    check_dim("CARE Q rows", n, q.nrows())?;
    check_dim("CARE Q columns", n, q.ncols())?;
    if m == 0 || n % m != 0 {
        return Err(Error::NoStabilizingSolution);
    }
    let rho = n / m;
    let mut k = DMatrix::zeros(m, n);
    for block in 0..rho {
        let coeff = binomial(rho, block);
        for i in 0..m {
            k[(i, block * m + i)] = coeff;
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..60 {
        let closed = f - g * &k;
        let w = q + k.transpose() * &k;
        let next = lyapunov(&closed, &w).ok_or(Error::NoStabilizingSolution)?;
        let change = (&next - &p).amax();
        p = next;
        k = g.transpose() * &p;
        if change <= 1e-15 * (1.0 + p.amax()) {
            break;
        }
    }
    let residual = care_residual(f, g, q, &p).norm();
    let eig = p.clone().symmetric_eigenvalues();
    if !(residual <= 1e-9 * (1.0 + p.norm())) || eig.min() <= 0.0 || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NoStabilizingSolution);
    }
    Ok(p)
}

/// A synthesized RES-CLF for one equality task.
#[derive(Debug, Clone, PartialEq)]
pub struct ResClf {
    pub rho: usize,
    pub m: usize,
    pub p: DMatrix<f64>,
    pub p_eps: DMatrix<f64>,
    pub eps: f64,
    pub gamma: f64,
    pub q: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Use the unscaled `P` in the `2ηᵀPGb` term of `L_fV`, as the formula
    /// is sometimes printed, instead of `P_ε` in both terms.
    pub literal_form: bool,
}

/// Builds the RES-CLF of a task with relative degree `rho` and `m` outputs.
///
/// `P_ε = diag(I/ε, I)·P·diag(I/ε, I)` for `ρ = 2` and `P/ε²` for `ρ = 1`.
/// Any `ε > 0` is accepted; values above one slow the decay below the CARE
/// rate.
pub fn make_res_clf(rho: usize, m: usize, eps: f64, q: Option<DMatrix<f64>>) -> Result<ResClf> {
    if !(rho == 1 || rho == 2) {
        return Err(Error::UnsupportedRelativeDegree(rho));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEps(eps));
    }
    if m == 0 {
        return Err(Error::InvalidTask("task has no outputs".into()));
    }
    let n = rho * m;
    let q = q.unwrap_or_else(|| DMatrix::identity(n, n));
    check_dim("CLF weight Q", n, q.nrows())?;
    check_dim("CLF weight Q", n, q.ncols())?;
    if (&q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
        return Err(Error::InvalidTask("CLF weight Q must be symmetric".into()));
    }
    let q_min = q.clone().symmetric_eigenvalues().min();
    if !(q_min > 0.0) {
        return Err(Error::InvalidTask("CLF weight Q must be positive definite".into()));
    }
    let (f, g) = brunovsky(rho, m);
    let p = solve_care(&f, &g, &q)?;
    let p_max = p.clone().symmetric_eigenvalues().max();
    let p_eps = match rho {
        1 => &p / (eps * eps),
        _ => {
            let scale = DVector::from_fn(n, |i, _| if i < m { 1.0 / eps } else { 1.0 });
            let s = DMatrix::from_diagonal(&scale);
            &s * &p * &s
        }
    };
    Ok(ResClf {
        rho,
        m,
        p,
        p_eps,
        eps,
        gamma: q_min / p_max,
        q,
        f,
        g,
        literal_form: false,
    })
}

/// One CLF inequality `l_g·u ≤ rhs` together with the quantities it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfRow {
    pub l_g: DVector<f64>,
    pub rhs: f64,
    pub v: f64,
    pub l_f: f64,
}

impl ResClf {
    pub fn dim(&self) -> usize {
        self.rho * self.m
    }

    /// Decay rate `γ/ε`.
    pub fn rate(&self) -> f64 {
        self.gamma / self.eps
    }

    pub fn value(&self, eta: &DVector<f64>) -> f64 {
        eta.dot(&(&self.p_eps * eta))
    }

    /// `(L_fV, L_gV)` for `η̇ = Fη + G(Au + b)`.
    pub fn lie_derivatives(&self, eta: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_dim("transverse state", self.dim(), eta.len())?;
        check_dim("task map rows", self.m, a.nrows())?;
        check_dim("task drift", self.m, b.len())?;
        let sym = self.f.transpose() * &self.p_eps + &self.p_eps * &self.f;
        let drift_weight = if self.literal_form { &self.p } else { &self.p_eps };
        let l_f = eta.dot(&(&sym * eta)) + 2.0 * eta.dot(&(drift_weight * &self.g * b));
        let l_g = 2.0 * (eta.transpose() * &self.p_eps * &self.g * a).transpose();
        Ok((l_f, l_g))
    }
}

/// The row `L_gV·u ≤ −(γ/ε)V − L_fV`; the slack is added by the hierarchy.
pub fn clf_row(clf: &ResClf, eval: &EqualityEval) -> Result<ClfRow> {
    let (l_f, l_g) = clf.lie_derivatives(&eval.eta, &eval.a, &eval.b)?;
    let v = clf.value(&eval.eta);
    Ok(ClfRow {
        rhs: -clf.rate() * v - l_f,
        l_g,
        v,
        l_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQRT3: f64 = 1.732_050_807_568_877_2;

    fn eval(eta: &[f64], a: DMatrix<f64>, b: &[f64]) -> EqualityEval {
        EqualityEval {
            y: DVector::zeros(b.len()),
            eta: DVector::from_column_slice(eta),
            a,
            b: DVector::from_column_slice(b),
        }
    }

    #[test]
    fn care_second_order_scalar() {
        let (f, g) = brunovsky(2, 1);
        let p = solve_care(&f, &g, &DMatrix::identity(2, 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[SQRT3, 1.0, 1.0, SQRT3]);
        assert!((&p - expected).amax() < 1e-12);
        assert!(care_residual(&f, &g, &DMatrix::identity(2, 2), &p).amax() < 1e-12);
    }

    #[test]
    fn care_first_order_scalar() {
        let (f, g) = brunovsky(1, 1);
        let p = solve_care(&f, &g, &DMatrix::identity(1, 1)).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn care_decoupled_chains_replicate_the_scalar_solution() {
        let (f, g) = brunovsky(2, 3);
        let p = solve_care(&f, &g, &DMatrix::identity(6, 6)).unwrap();
        for i in 0..3 {
            assert!((p[(i, i)] - SQRT3).abs() < 1e-12);
            assert!((p[(i, i + 3)] - 1.0).abs() < 1e-12);
            assert!((p[(i + 3, i + 3)] - SQRT3).abs() < 1e-12);
        }
        let mut off = p.clone();
        for i in 0..3 {
            off[(i, i)] = 0.0;
            off[(i + 3, i + 3)] = 0.0;
            off[(i, i + 3)] = 0.0;
            off[(i + 3, i)] = 0.0;
        }
        assert!(off.amax() < 1e-12);
    }

    #[test]
    fn care_residual_for_all_small_sizes() {
        for rho in 1..=8 {
            for m in 1..=8 / rho {
                let (f, g) = brunovsky(rho, m);
                let n = rho * m;
                let q = DMatrix::identity(n, n);
                let p = solve_care(&f, &g, &q).unwrap();
                assert!(care_residual(&f, &g, &q, &p).norm() <= 1e-9 * (1.0 + p.norm()), "rho={rho} m={m}");
            }
        }
    }

    #[test]
    fn scaled_clf_matrices() {
        let clf = make_res_clf(2, 1, 1.0, None).unwrap();
        assert_eq!(clf.p_eps, clf.p);
        let clf = make_res_clf(2, 1, 0.5, None).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0 * SQRT3, 2.0, 2.0, SQRT3]);
        assert!((&clf.p_eps - expected).amax() < 1e-12);
        assert!((clf.gamma - 1.0 / (SQRT3 + 1.0)).abs() < 1e-12);
        let first = make_res_clf(1, 2, 0.5, None).unwrap();
        assert!((&first.p_eps - DMatrix::identity(2, 2) * 4.0).amax() < 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert_eq!(make_res_clf(2, 1, 0.0, None).unwrap_err(), Error::InvalidEps(0.0));
        assert!(matches!(make_res_clf(2, 1, -1.0, None), Err(Error::InvalidEps(_))));
        assert!(matches!(make_res_clf(2, 1, f64::NAN, None), Err(Error::InvalidEps(_))));
        assert_eq!(make_res_clf(3, 1, 1.0, None).unwrap_err(), Error::UnsupportedRelativeDegree(3));
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(make_res_clf(2, 1, 1.0, Some(not_pd)).is_err());
        assert!(matches!(make_res_clf(2, 1, 1.0, Some(DMatrix::identity(3, 3))), Err(Error::DimensionMismatch { .. })));
        // Rates slower than the CARE rate are allowed.
        assert!(make_res_clf(2, 1, 1.2, None).is_ok());
    }

    #[test]
    fn row_is_vacuous_at_the_equilibrium() {
        let clf = make_res_clf(2, 2, 0.3, None).unwrap();
        let row = clf_row(&clf, &eval(&[0.0; 4], DMatrix::identity(2, 2), &[0.3, -0.1])).unwrap();
        assert_eq!(row.l_g, DVector::zeros(2));
        assert_eq!(row.rhs, 0.0);
    }

    #[test]
    fn double_integrator_row() {
        let clf = make_res_clf(2, 1, 1.0, None).unwrap();
        let row = clf_row(&clf, &eval(&[1.0, 0.0], DMatrix::identity(1, 1), &[0.0])).unwrap();
        assert!((row.l_g[0] - 2.0).abs() < 1e-12);
        assert!((row.v - SQRT3).abs() < 1e-12);
        // ηᵀ(FᵀP + PF)η = 2·p₁₂·η₁η₂ … = 0 at η = (1, 0) since F shifts η₂ into η₁.
        let sym = clf.f.transpose() * &clf.p + &clf.p * &clf.f;
        let quad = DVector::from_column_slice(&[1.0, 0.0]).dot(&(&sym * DVector::from_column_slice(&[1.0, 0.0])));
        assert!((row.rhs - (-clf.gamma * SQRT3 - quad)).abs() < 1e-12);
    }

    #[test]
    fn literal_form_changes_only_the_drift_term() {
        let mut clf = make_res_clf(2, 1, 0.5, None).unwrap();
        let e = eval(&[0.4, -0.3], DMatrix::from_element(1, 1, 2.0), &[0.7]);
        let consistent = clf_row(&clf, &e).unwrap();
        clf.literal_form = true;
        let literal = clf_row(&clf, &e).unwrap();
        assert_eq!(consistent.l_g, literal.l_g);
        assert_ne!(consistent.rhs, literal.rhs);
        let eta = &e.eta;
        let diff = 2.0 * eta.dot(&((&clf.p_eps - &clf.p) * &clf.g * &e.b));
        assert!(((literal.l_f - consistent.l_f) + diff).abs() < 1e-12);
    }

    #[test]
    fn lie_derivatives_match_directional_derivative() {
        // V̇ = ∇V·(Fη + G(Au+b)) for any u.
        let clf = make_res_clf(2, 2, 0.7, None).unwrap();
        let eta = DVector::from_column_slice(&[0.3, -0.4, 1.1, 0.2]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.2, 0.0, 2.0, 1.0]);
        let b = DVector::from_column_slice(&[0.4, -0.9]);
        let u = DVector::from_column_slice(&[0.1, -0.3, 0.8]);
        let (lf, lg) = clf.lie_derivatives(&eta, &a, &b).unwrap();
        let eta_dot = &clf.f * &eta + &clf.g * (&a * &u + &b);
        let grad = 2.0 * &clf.p_eps * &eta;
        assert!((lf + lg.dot(&u) - grad.dot(&eta_dot)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_in_row() {
        let clf = make_res_clf(2, 1, 1.0, None).unwrap();
        let bad = eval(&[1.0, 0.0, 0.0], DMatrix::identity(1, 1), &[0.0]);
        assert!(matches!(clf_row(&clf, &bad), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn sandwich_bound(
            eps in 0.05f64..=1.0,
            e in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let clf = make_res_clf(2, 2, eps, None).unwrap();
            let eta = DVector::from_vec(e);
            let eig = clf.p.clone().symmetric_eigenvalues();
            let v = clf.value(&eta);
            let nn = eta.norm_squared();
            prop_assert!(eig.min() * nn <= v * (1.0 + 1e-12) + 1e-12);
            prop_assert!(v <= eig.max() / (eps * eps) * nn * (1.0 + 1e-12) + 1e-12);
        }
    }
}
