//! Strict task-priority control through a cascade of QPs.
//!
//! Level 1 enforces its CLF rows (with penalized slacks `δ`) and its ECBF
//! rows (without slack). Each following level `n` re-solves the same
//! objective with every task of levels `< n` frozen at the margin achieved by
//! the previous solution `u*_{n−1}`:
//!
//! * `L_gV_i·u ≤ L_gV_i·u*_{n−1}` for higher-priority equality tasks;
//! * `a_k·u ≥ a_k·u*_{n−1}` for higher-priority set tasks;
//!
//! plus its own CLF rows (fresh `δ`) and ECBF rows (fresh `s`). The input
//! box and rate limits apply at every level. The applied input is the last
//! level's solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cbf::{ecbf_row, Ecbf};
use crate::clf::{clf_row, ResClf};
use crate::error::{check_dim, Error, Result};
use crate::model::{Plant, PlantState};
use crate::qpsolver::{self, KktResiduals, QpProblem, QpSettings, QpStatus};
use crate::tasks::{EqualityEval, EqualityTask, SetEval, SetTask};

/// Margin by which frozen rows may be violated before a priority violation
/// is reported; absorbs interior-point tolerances.
pub const TAU_FREEZE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityEntry {
    pub task: EqualityTask,
    pub clf: ResClf,
    /// Penalty `w` on the task's slack `δ`.
    pub weight: f64,
    /// Whether the CLF row gets a slack `δ`; without one the row is hard.
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEntry {
    pub task: SetTask,
    pub ecbf: Ecbf,
    /// Penalty `κ` on the task's slack `s`.
    pub kappa: f64,
    pub slack_allowed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityLevel {
    pub index: usize,
    pub equality: Vec<EqualityEntry>,
    pub set: Vec<SetEntry>,
}

/// Input magnitude and rate limits; infinite entries disable a limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub u_max: DVector<f64>,
    pub du_max: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(p: usize) -> Self {
        Self {
            u_max: DVector::from_element(p, f64::INFINITY),
            du_max: DVector::from_element(p, f64::INFINITY),
        }
    }

    pub fn uniform(p: usize, u_max: f64, du_max: f64) -> Self {
        Self {
            u_max: DVector::from_element(p, u_max),
            du_max: DVector::from_element(p, du_max),
        }
    }

    /// Box `[lb, ub]` for this step given the previously applied input.
    pub fn box_for(&self, u_prev: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = u_prev.len();
        let lb = DVector::from_fn(p, |i, _| (-self.u_max[i]).max(u_prev[i] - self.du_max[i]));
        let ub = DVector::from_fn(p, |i, _| self.u_max[i].min(u_prev[i] + self.du_max[i]));
        (lb, ub)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<PriorityLevel>,
    pub qp_settings: QpSettings,
    pub tau_freeze: f64,
    /// Optional `λ‖u‖²` added to the objective; zero reproduces `‖Au + b‖²`.
    pub input_regularization: f64,
    /// Fraction of `tau_freeze` by which frozen rows are loosened.
    pub freeze_relaxation: f64,
}

/// Whether a frozen row belongs to an equality (CLF) or a set (ECBF) task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Clf,
    Ecbf,
}

/// One frozen higher-priority row evaluated at this level's solution and at
/// the previous cascade stage's solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrozenRow {
    pub task: String,
    pub task_level: usize,
    pub kind: RowKind,
    /// `L_gV·u*_n` (CLF) or `a·u*_n` (ECBF).
    pub value: f64,
    /// The same row at `u*_{n−1}`.
    pub reference: f64,
}

impl FrozenRow {
    /// Amount by which the priority inequality is violated (≤ 0 when it holds).
    pub fn excess(&self) -> f64 {
        match self.kind {
            RowKind::Clf => self.value - self.reference,
            RowKind::Ecbf => self.reference - self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpDiagnostics {
    pub status: Option<QpStatus>,
    pub iterations: usize,
    pub objective: f64,
    pub kkt: KktResiduals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub index: usize,
    pub u_star: DVector<f64>,
    /// `(task, δ)` for this level's slacked equality tasks.
    pub deltas: Vec<(String, f64)>,
    /// `(task, s)` for this level's slacked set tasks.
    pub set_slacks: Vec<(String, f64)>,
    pub frozen: Vec<FrozenRow>,
    pub qp: QpDiagnostics,
    /// The QP failed and the level fell back to its predecessor's input.
    pub fallback: bool,
    pub problem: Option<QpProblem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfStatus {
    pub task: String,
    pub level: usize,
    pub y: DVector<f64>,
    pub v: f64,
    pub rate: f64,
    pub l_f: f64,
    pub l_g: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetStatus {
    pub task: String,
    pub level: usize,
    pub h: f64,
    pub eta_b: DVector<f64>,
    pub a_row: DVector<f64>,
    /// `K_αη_b + b` — the ECBF row holds at `u` iff `a·u + drift_margin ≥ 0`.
    pub drift_margin: f64,
}

/// Something noteworthy that happened during one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// The level's QP had no solution; the input of the previous time step
    /// (level 1) or previous cascade stage (level ≥ 2) was used instead.
    LevelInfeasible { level: usize },
    SolverMaxIters { level: usize, violation: f64 },
    SolverFailure { level: usize, message: String },
    /// `u*_{n−1}` did not satisfy level n's frozen rows and bounds.
    ChainViolation { level: usize, excess: f64 },
    /// A frozen row was violated by more than `τ_freeze`.
    PriorityViolation { level: usize, task: String, excess: f64 },
    /// The state is outside a set task's safe set.
    SafetyViolation { task: String, h: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStepReport {
    pub levels: Vec<LevelReport>,
    pub u_applied: DVector<f64>,
    pub clf: Vec<ClfStatus>,
    pub sets: Vec<SetStatus>,
    pub events: Vec<Event>,
}

impl ControlStepReport {
    pub fn u_star_per_level(&self) -> Vec<DVector<f64>> {
        self.levels.iter().map(|l| l.u_star.clone()).collect()
    }

    /// Largest frozen-row excess over all levels (≤ τ_freeze when strict
    /// priority holds).
    pub fn max_priority_excess(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.frozen.iter())
            .fold(f64::NEG_INFINITY, |m, r| m.max(r.excess()))
    }
}

/// `(H, c)` with `uᵀHu + cᵀu + bᵀb = ‖Au + b‖²`.
pub fn build_objective(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dim("objective drift", a.nrows(), b.len())?;
    let h = a.transpose() * a;
    let c = 2.0 * a.transpose() * b;
    Ok((0.5 * (&h + h.transpose()), c))
}

/// Everything evaluated once per control step.
struct StepData {
    eq: Vec<(usize, EqualityEval)>,
    clf_rows: Vec<(DVector<f64>, f64)>,
    set: Vec<(usize, SetEval)>,
    ecbf_rows: Vec<(DVector<f64>, f64)>,
}

impl Hierarchy {
    pub fn new(levels: Vec<PriorityLevel>) -> Result<Self> {
        for (i, level) in levels.iter().enumerate() {
            if level.index != i + 1 {
                return Err(Error::InvalidTask(format!(
                    "priority levels must be numbered 1, 2, … without gaps; found {} at position {}",
                    level.index,
                    i + 1
                )));
            }
            for e in &level.equality {
                if !(e.weight > 0.0) || !e.weight.is_finite() {
                    return Err(Error::InvalidTask(format!("task `{}`: weight must be > 0", e.task.name)));
                }
                if e.clf.rho != e.task.rho() || e.clf.m != e.task.dim() {
                    return Err(Error::DimensionMismatch {
                        what: "CLF size",
                        expected: e.task.rho() * e.task.dim(),
                        found: e.clf.dim(),
                    });
                }
            }
            for s in &level.set {
                if !(s.kappa > 0.0) || !s.kappa.is_finite() {
                    return Err(Error::InvalidTask(format!("task `{}`: kappa must be > 0", s.task.name)));
                }
                if level.index == 1 && s.slack_allowed {
                    return Err(Error::InvalidTask(format!(
                        "task `{}`: set tasks at level 1 cannot have slack",
                        s.task.name
                    )));
                }
                check_dim("ECBF relative degree", s.task.relative_degree(), s.ecbf.r)?;
            }
        }
        Ok(Self {
            levels,
            qp_settings: QpSettings::default(),
            tau_freeze: TAU_FREEZE,
            input_regularization: 0.0,
            freeze_relaxation: 0.5,
        })
    }

    pub fn equality_tasks(&self) -> impl Iterator<Item = (usize, &EqualityEntry)> {
        self.levels.iter().flat_map(|l| l.equality.iter().map(move |e| (l.index, e)))
    }

    pub fn set_tasks(&self) -> impl Iterator<Item = (usize, &SetEntry)> {
        self.levels.iter().flat_map(|l| l.set.iter().map(move |e| (l.index, e)))
    }

    fn evaluate(&self, plant: &Plant, state: &PlantState) -> Result<StepData> {
        let dynamics = plant.dynamics_terms(state)?;
        let mut data = StepData {
            eq: Vec::new(),
            clf_rows: Vec::new(),
            set: Vec::new(),
            ecbf_rows: Vec::new(),
        };
        for (level, e) in self.equality_tasks() {
            let eval = e.task.evaluate(plant, state, &dynamics)?;
            let row = clf_row(&e.clf, &eval)?;
            data.clf_rows.push((row.l_g, row.rhs));
            data.eq.push((level, eval));
        }
        for (level, s) in self.set_tasks() {
            let eval = s.task.evaluate(plant, state, &dynamics)?;
            data.ecbf_rows.push(ecbf_row(&s.ecbf, &eval)?);
            data.set.push((level, eval));
        }
        Ok(data)
    }

    /// Objective over `u` shared by every level: `‖Au + b‖²` with all
    /// equality tasks stacked, plus the optional input regularization.
    fn objective(&self, data: &StepData, p: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let rows: usize = data.eq.iter().map(|(_, e)| e.a.nrows()).sum();
        let mut a = DMatrix::zeros(rows, p);
        let mut b = DVector::zeros(rows);
        let mut r = 0;
        for (_, e) in &data.eq {
            check_dim("task input map", p, e.a.ncols())?;
            a.view_mut((r, 0), (e.a.nrows(), p)).copy_from(&e.a);
            b.rows_mut(r, e.b.len()).copy_from(&e.b);
            r += e.a.nrows();
        }
        let (mut h, c) = build_objective(&a, &b)?;
        for i in 0..p {
            h[(i, i)] += self.input_regularization;
        }
        Ok((h, c))
    }

    /// CLF values and barrier values at `state`, without solving any QP.
    pub fn task_status(&self, plant: &Plant, state: &PlantState) -> Result<(Vec<ClfStatus>, Vec<SetStatus>)> {
        let data = self.evaluate(plant, state)?;
        Ok(self.statuses(&data))
    }

    fn statuses(&self, data: &StepData) -> (Vec<ClfStatus>, Vec<SetStatus>) {
        let clf = self
            .equality_tasks()
            .zip(data.eq.iter().zip(data.clf_rows.iter()))
            .map(|((level, e), ((_, eval), (l_g, rhs)))| {
                let v = e.clf.value(&eval.eta);
                ClfStatus {
                    task: e.task.name.clone(),
                    level,
                    y: eval.y.clone(),
                    v,
                    rate: e.clf.rate(),
                    l_f: -rhs - e.clf.rate() * v,
                    l_g: l_g.clone(),
                }
            })
            .collect();
        let sets = self
            .set_tasks()
            .zip(data.set.iter().zip(data.ecbf_rows.iter()))
            .map(|((level, s), ((_, eval), (a, rhs)))| SetStatus {
                task: s.task.name.clone(),
                level,
                h: eval.h,
                eta_b: eval.eta_b.clone(),
                a_row: a.clone(),
                drift_margin: -rhs,
            })
            .collect::<Vec<_>>();
        (clf, sets)
    }

    /// Solves the prioritized cascade for one control step.
    pub fn control_step(
        &self,
        plant: &Plant,
        state: &PlantState,
        u_prev: &DVector<f64>,
        bounds: &Bounds,
    ) -> Result<(DVector<f64>, ControlStepReport)> {
        self.control_step_with(plant, state, u_prev, bounds, false)
    }

    /// As [`Hierarchy::control_step`]; `capture_problems` keeps every level's
    /// QP in the report.
    pub fn control_step_with(
        &self,
        plant: &Plant,
        state: &PlantState,
        u_prev: &DVector<f64>,
        bounds: &Bounds,
        capture_problems: bool,
    ) -> Result<(DVector<f64>, ControlStepReport)> {
        let p = plant.inputs();
        check_dim("previous input", p, u_prev.len())?;
        check_dim("input bound", p, bounds.u_max.len())?;
        check_dim("input rate bound", p, bounds.du_max.len())?;
        let data = self.evaluate(plant, state)?;
        let (h_u, c_u) = self.objective(&data, p)?;
        let (lb, ub) = bounds.box_for(u_prev);

        let mut events = Vec::new();
        let mut levels = Vec::new();
        let mut u_star = u_prev.clone();
        for level in &self.levels {
            let report = self.solve_level(level.index, &data, &h_u, &c_u, &lb, &ub, &u_star, capture_problems, &mut events);
            u_star = report.u_star.clone();
            levels.push(report);
        }

        let (clf, sets) = self.statuses(&data);
        for s in &sets {
            if s.h < 0.0 {
                events.push(Event::SafetyViolation {
                    task: s.task.clone(),
                    h: s.h,
                });
            }
        }
        let report = ControlStepReport {
            levels,
            u_applied: u_star.clone(),
            clf,
            sets,
            events,
        };
        Ok((u_star, report))
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_level(
        &self,
        index: usize,
        data: &StepData,
        h_u: &DMatrix<f64>,
        c_u: &DVector<f64>,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
        u_before: &DVector<f64>,
        capture: bool,
        events: &mut Vec<Event>,
    ) -> LevelReport {
        let p = c_u.len();
        let level = &self.levels[index - 1];

        // Frozen rows of all higher-priority tasks, as (row over u, rhs, label).
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut frozen_meta = Vec::new();
        // Frozen rows are loosened by a fraction of τ_freeze so that the
        // level's feasible set keeps an interior even when `u*_{n−1}` sits
        // on a vertex of the box; interior-point iterations stall otherwise.
        // The budget is split across the cascade so that the applied input
        // stays within `τ_freeze` of every level-1 row in total.
        let relax = self.freeze_relaxation * self.tau_freeze / (self.levels.len() - 1).max(1) as f64;
        if index > 1 {
            for (i, (task_level, e)) in self.equality_tasks().enumerate() {
                if task_level < index {
                    let l_g = &data.clf_rows[i].0;
                    rows.push((l_g.clone(), l_g.dot(u_before) + relax));
                    frozen_meta.push((e.task.name.clone(), task_level, RowKind::Clf, l_g.clone()));
                }
            }
            for (k, (task_level, s)) in self.set_tasks().enumerate() {
                if task_level < index {
                    let a = &data.ecbf_rows[k].0;
                    rows.push((-a, -a.dot(u_before) + relax));
                    frozen_meta.push((s.task.name.clone(), task_level, RowKind::Ecbf, a.clone()));
                }
            }
        }
        let frozen_count = rows.len();

        // This level's own rows; slack columns are appended after u.
        // Row index of each slack column; the slack enters its row with −1.
        let mut slack_cols: Vec<usize> = Vec::new();
        let mut deltas_names = Vec::new();
        let mut s_names = Vec::new();
        let eq_offset = self.equality_tasks().take_while(|(l, _)| *l < index).count();
        for (j, e) in level.equality.iter().enumerate() {
            let (l_g, rhs) = &data.clf_rows[eq_offset + j];
            if e.slack {
                slack_cols.push(rows.len());
                deltas_names.push((e.task.name.clone(), slack_cols.len() - 1, e.weight));
            }
            rows.push((l_g.clone(), *rhs));
        }
        let set_offset = self.set_tasks().take_while(|(l, _)| *l < index).count();
        for (j, s) in level.set.iter().enumerate() {
            let (a, rhs) = &data.ecbf_rows[set_offset + j];
            if s.slack_allowed {
                slack_cols.push(rows.len());
                s_names.push((s.task.name.clone(), slack_cols.len() - 1, s.kappa));
            }
            rows.push((-a, -rhs));
        }

        let nv = p + slack_cols.len();
        let mut g = DMatrix::zeros(rows.len(), nv);
        let mut h = DVector::zeros(rows.len());
        for (r, (row, rhs)) in rows.iter().enumerate() {
            g.view_mut((r, 0), (1, p)).copy_from(&row.transpose());
            h[r] = *rhs;
        }
        for (col, &row) in slack_cols.iter().enumerate() {
            g[(row, p + col)] = -1.0;
        }
        let mut hess = DMatrix::zeros(nv, nv);
        hess.view_mut((0, 0), (p, p)).copy_from(&(2.0 * h_u));
        for (_, col, w) in deltas_names.iter().chain(s_names.iter()) {
            hess[(p + col, p + col)] = 2.0 * w;
        }
        let mut c = DVector::zeros(nv);
        c.rows_mut(0, p).copy_from(c_u);
        let mut lbv = DVector::from_element(nv, f64::NEG_INFINITY);
        let mut ubv = DVector::from_element(nv, f64::INFINITY);
        lbv.rows_mut(0, p).copy_from(lb);
        ubv.rows_mut(0, p).copy_from(ub);
        let problem = QpProblem {
            hessian: hess,
            c,
            g_ineq: g,
            h_ineq: h,
            lb: Some(lbv),
            ub: Some(ubv),
        };

        if index > 1 {
            // u*_{n−1} must satisfy the frozen rows and the box.
            let mut excess: f64 = 0.0;
            for (row, rhs) in rows.iter().take(frozen_count) {
                excess = excess.max(row.dot(u_before) - rhs);
            }
            for i in 0..p {
                excess = excess.max(lb[i] - u_before[i]).max(u_before[i] - ub[i]);
            }
            if excess > self.tau_freeze {
                events.push(Event::ChainViolation { level: index, excess });
            }
        }

        let outcome = qpsolver::solve(&problem, None, &self.qp_settings);
        let (u_star, v, qp, fallback) = match outcome {
            Ok(sol) => {
                let violation = problem.max_violation(&sol.v);
                let usable = match sol.status {
                    QpStatus::Optimal => true,
                    QpStatus::MaxIters => {
                        events.push(Event::SolverMaxIters { level: index, violation });
                        violation <= self.tau_freeze
                    }
                    QpStatus::Infeasible => false,
                };
                let diag = QpDiagnostics {
                    status: Some(sol.status),
                    iterations: sol.iterations,
                    objective: sol.objective,
                    kkt: sol.kkt,
                };
                if usable {
                    (sol.v.rows(0, p).into_owned(), Some(sol.v), diag, false)
                } else {
                    events.push(Event::LevelInfeasible { level: index });
                    (u_before.clone(), None, diag, true)
                }
            }
            Err(err) => {
                events.push(Event::SolverFailure {
                    level: index,
                    message: err.to_string(),
                });
                events.push(Event::LevelInfeasible { level: index });
                let diag = QpDiagnostics {
                    status: None,
                    iterations: 0,
                    objective: f64::NAN,
                    kkt: KktResiduals::default(),
                };
                (u_before.clone(), None, diag, true)
            }
        };

        let frozen: Vec<FrozenRow> = frozen_meta
            .into_iter()
            .map(|(task, task_level, kind, row)| FrozenRow {
                task,
                task_level,
                kind,
                value: row.dot(&u_star),
                reference: row.dot(u_before),
            })
            .collect();
        for row in &frozen {
            if row.excess() > self.tau_freeze {
                events.push(Event::PriorityViolation {
                    level: index,
                    task: row.task.clone(),
                    excess: row.excess(),
                });
            }
        }
        let slack_value = |col: usize| v.as_ref().map_or(0.0, |v| v[p + col]);
        LevelReport {
            index,
            deltas: deltas_names.iter().map(|(n, col, _)| (n.clone(), slack_value(*col))).collect(),
            set_slacks: s_names.iter().map(|(n, col, _)| (n.clone(), slack_value(*col))).collect(),
            u_star,
            frozen,
            qp,
            fallback,
            problem: capture.then_some(problem),
        }
    }
}
