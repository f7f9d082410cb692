//! Exponential control barrier functions (ECBFs) for set-based tasks.
//!
//! For a barrier `h` of relative degree `r`, `η_b = (h, …, h^(r−1))` obeys
//! `η̇_b = F_bη_b + G_bμ` with `μ = h^(r)`. Requiring `μ ≥ −K_αη_b` with
//! `F_b − G_bK_α` Hurwitz keeps `h` above the decaying envelope
//! `C_b e^{(F_b−G_bK_α)t} η_b(0)`, so the safe set `h ≥ 0` is forward
//! invariant.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::tasks::SetEval;

#[derive(Debug, Clone, PartialEq)]
pub struct Ecbf {
    pub k_alpha: DVector<f64>,
    pub r: usize,
    pub f_b: DMatrix<f64>,
    pub g_b: DMatrix<f64>,
    pub c_b: DMatrix<f64>,
}

fn companion(r: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut f = DMatrix::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        f[(i, i + 1)] = 1.0;
    }
    let mut g = DMatrix::zeros(r, 1);
    g[(r - 1, 0)] = 1.0;
    let mut c = DMatrix::zeros(1, r);
    c[(0, 0)] = 1.0;
    (f, g, c)
}

/// Closed-loop eigenvalues of `F_b − G_bK_α`; errors unless all lie in the
/// open left half-plane.
pub fn validate_kalpha(k_alpha: &DVector<f64>, r: usize) -> Result<Vec<Complex<f64>>> {
    if r == 0 {
        return Err(Error::UnsupportedRelativeDegree(0));
    }
    check_dim("K_alpha", r, k_alpha.len())?;
    if !k_alpha.iter().all(|k| k.is_finite()) {
        return Err(Error::NotHurwitz {
            max_real_part: f64::NAN,
        });
    }
    let eig: Vec<Complex<f64>> = match r {
        1 => vec![Complex::new(-k_alpha[0], 0.0)],
        2 => {
            let (k0, k1) = (k_alpha[0], k_alpha[1]);
            let disc = k1 * k1 - 4.0 * k0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // Stable pairing avoids cancellation for the small root.
                let big = -0.5 * (k1 + k1.signum() * sq);
                let small = if big != 0.0 { k0 / big } else { 0.0 };
                vec![Complex::new(big, 0.0), Complex::new(small, 0.0)]
            } else {
                let im = 0.5 * (-disc).sqrt();
                vec![Complex::new(-0.5 * k1, im), Complex::new(-0.5 * k1, -im)]
            }
        }
        _ => closed_loop(k_alpha, r).complex_eigenvalues().iter().copied().collect(),
    };
    let max_real_part = eig.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.re));
    if !(max_real_part < 0.0) {
        return Err(Error::NotHurwitz { max_real_part });
    }
    Ok(eig)
}

fn closed_loop(k_alpha: &DVector<f64>, r: usize) -> DMatrix<f64> {
    let (f, g, _) = companion(r);
    f - g * k_alpha.transpose()
}

pub fn make_ecbf(k_alpha: DVector<f64>, r: usize) -> Result<Ecbf> {
    validate_kalpha(&k_alpha, r)?;
    let (f_b, g_b, c_b) = companion(r);
    Ok(Ecbf {
        k_alpha,
        r,
        f_b,
        g_b,
        c_b,
    })
}

/// Gain placing the closed-loop poles at the given negative reals.
pub fn kalpha_from_poles(poles: &[f64]) -> Result<DVector<f64>> {
    if poles.is_empty() {
        return Err(Error::UnsupportedRelativeDegree(0));
    }
    if let Some(&p) = poles.iter().find(|p| !(**p < 0.0)) {
        return Err(Error::NotHurwitz { max_real_part: p });
    }
    // Coefficients of ∏(s − pᵢ), lowest degree first, leading 1 implied.
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= p * c;
        }
        coeffs = next;
    }
    coeffs.pop();
    Ok(DVector::from_vec(coeffs))
}

/// The row `a·u ≥ rhs` with `rhs = −K_αη_b − b`.
pub fn ecbf_row(ecbf: &Ecbf, eval: &SetEval) -> Result<(DVector<f64>, f64)> {
    check_dim("barrier state", ecbf.r, eval.eta_b.len())?;
    Ok((eval.a_row.clone(), -ecbf.k_alpha.dot(&eval.eta_b) - eval.b))
}

impl Ecbf {
    /// `K_αη_b + b + a·u`: nonnegative when the ECBF condition holds at `u`.
    pub fn margin(&self, eval: &SetEval, u: &DVector<f64>) -> f64 {
        eval.a_row.dot(u) + eval.b + self.k_alpha.dot(&eval.eta_b)
    }
}

/// Lower envelope `C_b e^{(F_b−G_bK_α)t} η_b(0)` for `t ≥ 0`.
pub fn comparison_bound(ecbf: &Ecbf, eta_b0: &DVector<f64>, t: f64) -> f64 {
    match ecbf.r {
        1 => eta_b0[0] * (-ecbf.k_alpha[0] * t).exp(),
        2 => {
            let (k0, k1) = (ecbf.k_alpha[0], ecbf.k_alpha[1]);
            let (h0, hd0) = (eta_b0[0], eta_b0[1]);
            let disc = k1 * k1 - 4.0 * k0;
            let repeated_tol = 1e-10 * (1.0 + k1 * k1);
            if disc.abs() <= repeated_tol {
                let lambda = -0.5 * k1;
                (h0 + (hd0 - lambda * h0) * t) * (lambda * t).exp()
            } else if disc > 0.0 {
                let sq = disc.sqrt();
                let l1 = 0.5 * (-k1 + sq);
                let l2 = 0.5 * (-k1 - sq);
                let c1 = (hd0 - l2 * h0) / (l1 - l2);
                let c2 = h0 - c1;
                c1 * (l1 * t).exp() + c2 * (l2 * t).exp()
            } else {
                let alpha = -0.5 * k1;
                let omega = 0.5 * (-disc).sqrt();
                (alpha * t).exp() * (h0 * (omega * t).cos() + (hd0 - alpha * h0) / omega * (omega * t).sin())
            }
        }
        _ => {
            let a = closed_loop(&ecbf.k_alpha, ecbf.r) * t;
            (&ecbf.c_b * a.exp() * eta_b0)[0]
        }
    }
}
