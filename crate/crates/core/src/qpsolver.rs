//! Dense convex QP solver: primal-dual interior point with Mehrotra's
//! predictor-corrector.
//!
//! Solves `min ½ vᵀHv + cᵀv` subject to `G v ≤ h` and `lb ≤ v ≤ ub`.
//! Box bounds are folded into inequality rows internally. Every row is
//! normalized to unit length, and pairs of opposite rows with an empty
//! interior (e.g. a coordinate whose lower and upper bound coincide) are
//! handled as equality constraints so the method does not have to approach
//! them from a non-existent interior.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
    /// Per-component lower bound; `-inf` entries are unbounded.
    pub lb: Option<DVector<f64>>,
    /// Per-component upper bound; `+inf` entries are unbounded.
    pub ub: Option<DVector<f64>>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            hessian,
            c,
            g_ineq: DMatrix::zeros(0, n),
            h_ineq: DVector::zeros(0),
            lb: None,
            ub: None,
        }
    }

    pub fn with_rows(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.g_ineq = g;
        self.h_ineq = h;
        self
    }

    pub fn with_bounds(mut self, lb: Option<DVector<f64>>, ub: Option<DVector<f64>>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn rows(&self) -> usize {
        self.h_ineq.len()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.hessian * v)) + self.c.dot(v)
    }

    /// Largest violation of the rows and bounds at `v` (zero when feasible).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.rows() > 0 {
            let r = &self.g_ineq * v - &self.h_ineq;
            worst = worst.max(r.max());
        }
        if let Some(lb) = &self.lb {
            for (x, l) in v.iter().zip(lb.iter()) {
                worst = worst.max(l - x);
            }
        }
        if let Some(ub) = &self.ub {
            for (x, u) in v.iter().zip(ub.iter()) {
                worst = worst.max(x - u);
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_dim("QP Hessian rows", n, self.hessian.nrows())?;
        check_dim("QP Hessian columns", n, self.hessian.ncols())?;
        check_dim("QP row matrix columns", n, self.g_ineq.ncols())?;
        check_dim("QP row bounds", self.g_ineq.nrows(), self.h_ineq.len())?;
        if let Some(lb) = &self.lb {
            check_dim("QP lower bound", n, lb.len())?;
        }
        if let Some(ub) = &self.ub {
            check_dim("QP upper bound", n, ub.len())?;
        }
        Ok(())
    }

    /// Self-describing text dump: dimensions followed by row-major values.
    /// Values use Rust's shortest round-trip formatting, so `load` restores
    /// the problem bit for bit.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let n = self.dim();
        let k = self.rows();
        writeln!(out, "qp-dump v1").unwrap();
        writeln!(out, "n {n}").unwrap();
        writeln!(out, "k {k}").unwrap();
        write_matrix(&mut out, "H", &self.hessian);
        write_vector(&mut out, "c", Some(&self.c));
        write_matrix(&mut out, "G", &self.g_ineq);
        write_vector(&mut out, "h", Some(&self.h_ineq));
        write_vector(&mut out, "lb", self.lb.as_ref());
        write_vector(&mut out, "ub", self.ub.as_ref());
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.trim()))
                .ok_or_else(|| Error::Parse(format!("QP dump ended before `{what}`")))
        };
        let (line, header) = next("header")?;
        if header != "qp-dump v1" {
            return Err(Error::Parse(format!("line {line}: unrecognized QP dump header `{header}`")));
        }
        let n = parse_count(next("n")?, "n")?;
        let k = parse_count(next("k")?, "k")?;
        let hessian = read_matrix(&mut next, "H", n, n)?;
        let c = read_vector(&mut next, "c", n)?.ok_or_else(|| Error::Parse("`c` cannot be none".into()))?;
        let g_ineq = read_matrix(&mut next, "G", k, n)?;
        let h_ineq = read_vector(&mut next, "h", k)?.ok_or_else(|| Error::Parse("`h` cannot be none".into()))?;
        let lb = read_vector(&mut next, "lb", n)?;
        let ub = read_vector(&mut next, "ub", n)?;
        let problem = QpProblem {
            hessian,
            c,
            g_ineq,
            h_ineq,
            lb,
            ub,
        };
        problem.validate()?;
        Ok(problem)
    }
}

fn write_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let line: Vec<String> = values.map(|v| v.to_string()).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        write_values(out, row.iter());
    }
}

fn write_vector(out: &mut String, name: &str, v: Option<&DVector<f64>>) {
    match v {
        Some(v) => {
            write!(out, "{name} {}", v.len()).unwrap();
            for x in v.iter() {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        None => writeln!(out, "{name} none").unwrap(),
    }
}

fn parse_count((line, text): (usize, &str), key: &str) -> Result<usize> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse(format!("line {line}: expected `{key} <count>`")));
    }
    parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("line {line}: bad count for `{key}`")))
}

fn parse_values(line: usize, parts: &[&str], expected: usize) -> Result<Vec<f64>> {
    if parts.len() != expected {
        return Err(Error::Parse(format!(
            "line {line}: expected {expected} values, found {}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: `{p}` is not a number")))
        })
        .collect()
}

fn read_matrix<'a, F>(next: &mut F, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>>
where
    F: FnMut(&str) -> Result<(usize, &'a str)>,
{
    let (line, text) = next(name)?;
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != name || parts[1].parse() != Ok(rows) || parts[2].parse() != Ok(cols) {
        return Err(Error::Parse(format!("line {line}: expected `{name} {rows} {cols}`")));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (line, text) = next(name)?;
        let parts: Vec<&str> = text.split_whitespace().collect();
        let values = parse_values(line, &parts, cols)?;
        for (c, v) in values.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

fn read_vector<'a, F>(next: &mut F, name: &str, len: usize) -> Result<Option<DVector<f64>>>
where
    F: FnMut(&str) -> Result<(usize, &'a str)>,
{
    let (line, text) = next(name)?;
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.first() != Some(&name) {
        return Err(Error::Parse(format!("line {line}: expected `{name}`")));
    }
    if parts.len() == 2 && parts[1] == "none" {
        return Ok(None);
    }
    if parts.len() < 2 || parts[1].parse() != Ok(len) {
        return Err(Error::Parse(format!("line {line}: expected `{name} {len} …`")));
    }
    let values = parse_values(line, &parts[2..], len)?;
    Ok(Some(DVector::from_vec(values)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

/// Nonnegative multipliers in the problem's own units.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDuals {
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: DVector<f64>,
    pub duals: QpDuals,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Termination threshold on the largest complementarity product.
    pub mu_tol: f64,
    /// Termination threshold on scaled primal and dual residuals.
    pub feas_tol: f64,
    /// Static regularization added to the reduced Newton matrix.
    pub regularization: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            mu_tol: 1e-9,
            feas_tol: 1e-10,
            regularization: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

struct Row {
    g: DVector<f64>,
    h: f64,
    origin: Origin,
    norm: f64,
}

/// Rows after folding, normalization and equality detection.
struct Folded {
    g: DMatrix<f64>,
    h: DVector<f64>,
    ineq_rows: Vec<Row>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// For each equality: (row it came from, its opposite partner).
    eq_rows: Vec<(Row, Row)>,
    /// A row that can never be satisfied (zero gradient, negative bound, or
    /// an opposite pair with a negative gap).
    trivially_infeasible: bool,
}

const ZERO_ROW: f64 = 1e-14;
const PAIR_TOL: f64 = 1e-12;

fn fold(problem: &QpProblem) -> Folded {
    let n = problem.dim();
    let mut rows = Vec::new();
    for i in 0..problem.rows() {
        rows.push((problem.g_ineq.row(i).transpose(), problem.h_ineq[i], Origin::Ineq(i)));
    }
    if let Some(lb) = &problem.lb {
        for (j, &l) in lb.iter().enumerate() {
            if l.is_finite() {
                let mut g = DVector::zeros(n);
                g[j] = -1.0;
                rows.push((g, -l, Origin::Lower(j)));
            }
        }
    }
    if let Some(ub) = &problem.ub {
        for (j, &u) in ub.iter().enumerate() {
            if u.is_finite() {
                let mut g = DVector::zeros(n);
                g[j] = 1.0;
                rows.push((g, u, Origin::Upper(j)));
            }
        }
    }

    let mut trivially_infeasible = false;
    let mut normalized: Vec<Row> = Vec::new();
    for (g, h, origin) in rows {
        let norm = g.norm();
        if norm < ZERO_ROW {
            if h < -PAIR_TOL {
                trivially_infeasible = true;
            }
            continue;
        }
        normalized.push(Row {
            g: g / norm,
            h: h / norm,
            origin,
            norm,
        });
    }

    let mut paired = vec![false; normalized.len()];
    let mut pairs = Vec::new();
    for i in 0..normalized.len() {
        if paired[i] {
            continue;
        }
        for j in i + 1..normalized.len() {
            if paired[j] {
                continue;
            }
            let (ri, rj) = (&normalized[i], &normalized[j]);
            if (&ri.g + &rj.g).amax() <= PAIR_TOL {
                let gap = ri.h + rj.h;
                if gap < -PAIR_TOL * (1.0 + ri.h.abs()) {
                    trivially_infeasible = true;
                } else if gap <= PAIR_TOL * (1.0 + ri.h.abs()) {
                    paired[i] = true;
                    paired[j] = true;
                    pairs.push((i, j));
                    break;
                }
            }
        }
    }

    let mut slots: Vec<Option<Row>> = normalized.into_iter().map(Some).collect();
    let mut eq_rows = Vec::new();
    for (i, j) in pairs {
        let ri = slots[i].take().unwrap();
        let rj = slots[j].take().unwrap();
        eq_rows.push((ri, rj));
    }
    let ineq_rows: Vec<Row> = slots.into_iter().flatten().collect();

    let k = ineq_rows.len();
    let p = eq_rows.len();
    let mut g = DMatrix::zeros(k, n);
    let mut h = DVector::zeros(k);
    for (r, row) in ineq_rows.iter().enumerate() {
        g.set_row(r, &row.g.transpose());
        h[r] = row.h;
    }
    let mut a = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    for (r, (row, _)) in eq_rows.iter().enumerate() {
        a.set_row(r, &row.g.transpose());
        b[r] = row.h;
    }
    Folded {
        g,
        h,
        ineq_rows,
        a,
        b,
        eq_rows,
        trivially_infeasible,
    }
}

/// Solves with default settings and no warm start.
pub fn solve_default(problem: &QpProblem) -> Result<QpSolution> {
    solve(problem, None, &QpSettings::default())
}

pub fn solve(problem: &QpProblem, warm_start: Option<&DVector<f64>>, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.dim();
    let folded = fold(problem);
    let k = folded.h.len();
    let p = folded.b.len();
    let hess = &problem.hessian;
    let c = &problem.c;

    let mut x = match warm_start {
        Some(w) => {
            check_dim("warm start", n, w.len())?;
            w.clone()
        }
        None => DVector::zeros(n),
    };
    let mut s = DVector::from_fn(k, |i, _| (folded.h[i] - folded.g.row(i).dot(&x.transpose())).max(1.0));
    let mut z = DVector::from_element(k, 1.0);
    let mut y = DVector::zeros(p);

    let c_scale = 1.0 + c.amax();
    let h_scale = 1.0 + folded.h.amax().max(folded.b.amax());
    let mut status = if folded.trivially_infeasible {
        QpStatus::Infeasible
    } else {
        QpStatus::MaxIters
    };
    let mut iterations = 0;

    while status == QpStatus::MaxIters && iterations < settings.max_iter {
        let r_d = hess * &x + c + folded.g.transpose() * &z + folded.a.transpose() * &y;
        let r_p = &folded.g * &x + &s - &folded.h;
        let r_e = &folded.a * &x - &folded.b;
        let comp_max = s.component_mul(&z).iter().fold(0.0f64, |m, v| m.max(*v));
        let mu = if k > 0 { s.dot(&z) / k as f64 } else { 0.0 };

        if r_d.amax() <= settings.feas_tol * c_scale
            && r_p.amax().max(r_e.amax()) <= settings.feas_tol * h_scale
            && comp_max <= settings.mu_tol
        {
            status = QpStatus::Optimal;
            break;
        }
        if farkas_certificate(&folded, &z, &y) {
            status = QpStatus::Infeasible;
            break;
        }
        iterations += 1;

        let d = DVector::from_fn(k, |i, _| z[i] / s[i]);
        let mut gtd = folded.g.transpose();
        for (col, di) in d.iter().enumerate() {
            gtd.column_mut(col).scale_mut(*di);
        }
        let base = hess + &gtd * &folded.g;
        let kkt = factorize(&base, &folded.a, settings.regularization)?;

        // Predictor: pure Newton step towards complementarity.
        let r_c_aff = s.component_mul(&z);
        let (_, _, dz_a, ds_a) = newton_step(&kkt, &folded, &gtd, &d, &s, &r_d, &r_p, &r_e, &r_c_aff);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));

        let r_c = if k > 0 {
            let s_aff = &s + alpha_aff * &ds_a;
            let z_aff = &z + alpha_aff * &dz_a;
            let mu_aff = s_aff.dot(&z_aff) / k as f64;
            let sigma = (mu_aff / mu).powi(3).min(1.0);
            r_c_aff + ds_a.component_mul(&dz_a) - DVector::from_element(k, sigma * mu)
        } else {
            r_c_aff
        };
        let (dx, dy, dz, ds) = newton_step(&kkt, &folded, &gtd, &d, &s, &r_d, &r_p, &r_e, &r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        y += alpha * dy;
        z += alpha * dz;
        s += alpha * ds;
        if !x.iter().chain(z.iter()).chain(s.iter()).all(|v| v.is_finite()) {
            return Err(Error::IllConditioned);
        }
    }

    Ok(finish(problem, &folded, x, &z, &y, status, iterations))
}

/// `z ≥ 0, y` with `Gᵀz + Aᵀy ≈ 0` and `hᵀz + bᵀy < 0` proves the rows
/// cannot all hold. Only checked once the multipliers have grown large,
/// which is how an infeasible problem manifests in the iteration.
fn farkas_certificate(folded: &Folded, z: &DVector<f64>, y: &DVector<f64>) -> bool {
    let scale = z.amax().max(y.amax());
    if !(scale > 1e6) {
        return false;
    }
    let w = folded.g.transpose() * z + folded.a.transpose() * y;
    let gap = folded.h.dot(z) + folded.b.dot(y);
    w.amax() <= 1e-7 * scale && gap < -1e-7 * scale
}

enum Kkt {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, usize),
}

impl Kkt {
    fn solve(&self, rhs_x: &DVector<f64>, rhs_y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            Kkt::Chol(ch) => (ch.solve(rhs_x), DVector::zeros(0)),
            Kkt::Lu(lu, n) => {
                let rhs = DVector::from_iterator(n + rhs_y.len(), rhs_x.iter().chain(rhs_y.iter()).copied());
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN));
                (sol.rows(0, *n).into_owned(), sol.rows(*n, rhs_y.len()).into_owned())
            }
        }
    }
}

/// Factorizes the reduced Newton matrix, raising the regularization until
/// the factorization succeeds.
fn factorize(base: &DMatrix<f64>, a: &DMatrix<f64>, reg0: f64) -> Result<Kkt> {
    let n = base.nrows();
    let p = a.nrows();
    let scale = 1.0 + base.diagonal().amax();
    let mut reg = reg0;
    while reg <= 1e-2 * scale {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if p == 0 {
            if let Some(ch) = m.cholesky() {
                return Ok(Kkt::Chol(ch));
            }
        } else {
            let mut full = DMatrix::zeros(n + p, n + p);
            full.view_mut((0, 0), (n, n)).copy_from(&m);
            full.view_mut((n, 0), (p, n)).copy_from(a);
            full.view_mut((0, n), (n, p)).copy_from(&a.transpose());
            for i in 0..p {
                full[(n + i, n + i)] = -reg;
            }
            let lu = full.lu();
            if lu.is_invertible() {
                let diag_min = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                if diag_min > 1e-14 * scale {
                    return Ok(Kkt::Lu(lu, n));
                }
            }
        }
        reg *= 100.0;
    }
    Err(Error::IllConditioned)
}

#[allow(clippy::too_many_arguments)]
fn newton_step(
    kkt: &Kkt,
    folded: &Folded,
    gtd: &DMatrix<f64>,
    d: &DVector<f64>,
    s: &DVector<f64>,
    r_d: &DVector<f64>,
    r_p: &DVector<f64>,
    r_e: &DVector<f64>,
    r_c: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let k = s.len();
    let rc_over_s = DVector::from_fn(k, |i, _| r_c[i] / s[i]);
    let rhs = -r_d - gtd * r_p + folded.g.transpose() * &rc_over_s;
    let (dx, dy) = kkt.solve(&rhs, &(-r_e));
    let g_dx = &folded.g * &dx;
    // dz = S⁻¹Z (G dx + r_p) − S⁻¹ r_c with D = S⁻¹Z.
    let dz = DVector::from_fn(k, |i, _| (g_dx[i] + r_p[i]) * d[i] - rc_over_s[i]);
    let ds = -r_p - g_dx;
    (dx, dy, dz, ds)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |a, (x, d)| a.min(-x / d))
}

fn finish(
    problem: &QpProblem,
    folded: &Folded,
    mut x: DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let n = problem.dim();
    if let Some(lb) = &problem.lb {
        for (xi, l) in x.iter_mut().zip(lb.iter()) {
            if *xi < *l {
                *xi = *l;
            }
        }
    }
    if let Some(ub) = &problem.ub {
        for (xi, u) in x.iter_mut().zip(ub.iter()) {
            if *xi > *u {
                *xi = *u;
            }
        }
    }

    let mut duals = QpDuals {
        ineq: DVector::zeros(problem.rows()),
        lower: DVector::zeros(n),
        upper: DVector::zeros(n),
    };
    let mut assign = |origin: Origin, scaled: f64, norm: f64| {
        let value = scaled.max(0.0) / norm;
        match origin {
            Origin::Ineq(i) => duals.ineq[i] += value,
            Origin::Lower(j) => duals.lower[j] += value,
            Origin::Upper(j) => duals.upper[j] += value,
        }
    };
    for (row, zi) in folded.ineq_rows.iter().zip(z.iter()) {
        assign(row.origin, *zi, row.norm);
    }
    for ((row, partner), yi) in folded.eq_rows.iter().zip(y.iter()) {
        if *yi >= 0.0 {
            assign(row.origin, *yi, row.norm);
        } else {
            assign(partner.origin, -*yi, partner.norm);
        }
    }

    let kkt = kkt_residuals(problem, &x, &duals);
    QpSolution {
        objective: problem.objective(&x),
        v: x,
        duals,
        status,
        kkt,
        iterations,
    }
}

/// KKT residuals of `(v, duals)` measured on the original problem.
pub fn kkt_residuals(problem: &QpProblem, v: &DVector<f64>, duals: &QpDuals) -> KktResiduals {
    let mut grad = &problem.hessian * v + &problem.c - &duals.lower + &duals.upper;
    if problem.rows() > 0 {
        grad += problem.g_ineq.transpose() * &duals.ineq;
    }
    let mut comp: f64 = 0.0;
    if problem.rows() > 0 {
        let slack = &problem.h_ineq - &problem.g_ineq * v;
        for (l, s) in duals.ineq.iter().zip(slack.iter()) {
            comp = comp.max((l * s).abs());
        }
    }
    if let Some(lb) = &problem.lb {
        for j in 0..v.len() {
            if lb[j].is_finite() {
                comp = comp.max((duals.lower[j] * (v[j] - lb[j])).abs());
            }
        }
    }
    if let Some(ub) = &problem.ub {
        for j in 0..v.len() {
            if ub[j].is_finite() {
                comp = comp.max((duals.upper[j] * (ub[j] - v[j])).abs());
            }
        }
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal: problem.max_violation(v),
        complementarity: comp,
    }
}
