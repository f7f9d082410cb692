//! Fixed-step closed-loop simulation.
//!
//! The plant is integrated with the third-order Bogacki–Shampine scheme
//! while the controller output is held constant over each step (zero-order
//! hold). Every logged quantity lives in one column of a [`SimLog`] so that
//! the log can be written to CSV, read back and re-checked by [`verify`]
//! without access to the controller that produced it.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Bounds, ClfStatus, ControlStepReport, Event, Hierarchy, SetStatus};
use crate::model::{Plant, PlantKind, PlantState};

/// Absolute slack allowed when comparing an applied input with its bounds.
pub const BOUND_TOL: f64 = 1e-9;
/// Barrier values above `-SAFETY_TOL` count as safe.
pub const SAFETY_TOL: f64 = 1e-6;
/// Allowed violation of a sampled CLF decay row.
pub const DECAY_TOL: f64 = 1e-5;
/// States with a larger norm abort the run.
pub const BLOWUP_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step in seconds.
    pub step: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// Log every n-th step.
    #[serde(default = "one")]
    pub log_decimation: usize,
    /// Invoke the controller every n-th step and hold its output in between.
    #[serde(default = "one")]
    pub control_decimation: usize,
}

fn one() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            duration: 10.0,
            log_decimation: 1,
            control_decimation: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Validation(format!("sim.step must be > 0, got {}", self.step)));
        }
        if !(self.duration >= self.step) || !self.duration.is_finite() {
            return Err(Error::Validation(format!(
                "sim.duration must be at least one step, got {}",
                self.duration
            )));
        }
        if self.log_decimation == 0 || self.control_decimation == 0 {
            return Err(Error::Validation("decimation factors must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of integration steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.step - 1e-9).ceil() as usize
    }
}

/// One Bogacki–Shampine (RK3) step of `ẋ = f(t, x)`.
pub fn rk3_step<F>(x: &DVector<f64>, t: f64, h: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + 0.5 * h * &k1))?;
    let k3 = f(t + 0.75 * h, &(x + 0.75 * h * &k2))?;
    Ok(x + h * ((2.0 / 9.0) * k1 + (1.0 / 3.0) * k2 + (4.0 / 9.0) * k3))
}

/// Advances the plant by one step with `u` held constant.
pub fn plant_step(plant: &Plant, state: &PlantState, u: &DVector<f64>, h: f64) -> Result<PlantState> {
    let n = plant.dof();
    let x = DVector::from_iterator(2 * n, state.xi.iter().chain(state.zeta.iter()).copied());
    let next = rk3_step(&x, state.t, h, |t, x| {
        let xi = x.rows(0, n).into_owned();
        let zeta = x.rows(n, n).into_owned();
        let (dxi, dzeta) = plant.state_derivative(&xi, &zeta, t, u)?;
        Ok(DVector::from_iterator(2 * n, dxi.iter().chain(dzeta.iter()).copied()))
    })?;
    Ok(PlantState::new(
        next.rows(0, n).into_owned(),
        next.rows(n, n).into_owned(),
        state.t + h,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityMeta {
    pub name: String,
    pub level: usize,
    pub dim: usize,
    pub rate: f64,
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    pub name: String,
    pub level: usize,
    pub relative_degree: usize,
    pub k_alpha: Vec<f64>,
    pub slack_allowed: bool,
}

/// Everything `verify` needs besides the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub scenario: String,
    pub plant: String,
    pub step: f64,
    pub duration: f64,
    pub log_decimation: usize,
    pub control_decimation: usize,
    /// Integration steps actually completed.
    pub steps: usize,
    pub levels: usize,
    pub inputs: usize,
    #[serde(with = "extended_floats")]
    pub u_max: Vec<f64>,
    #[serde(with = "extended_floats")]
    pub du_max: Vec<f64>,
    pub tau_freeze: f64,
    pub equality: Vec<EqualityMeta>,
    pub sets: Vec<SetMeta>,
    /// Why the run stopped early, if it did.
    pub abort: Option<String>,
}

/// JSON has no infinities; unbounded limits are written as `"inf"`.
mod extended_floats {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let nums: Vec<Num> = values
            .iter()
            .map(|v| if v.is_finite() { Num::Finite(*v) } else { Num::Text(v.to_string()) })
            .collect();
        nums.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Num>::deserialize(d)?
            .into_iter()
            .map(|n| match n {
                Num::Finite(v) => Ok(v),
                Num::Text(t) => t.parse().map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    fn new(name: impl Into<String>, unit: &str) -> Self {
        Self {
            name: name.into(),
            unit: unit.to_string(),
        }
    }

    fn header(&self) -> String {
        format!("{} [{}]", self.name, self.unit)
    }

    fn parse_header(text: &str) -> Result<Self> {
        let text = text.trim();
        match (text.rfind(" ["), text.ends_with(']')) {
            (Some(i), true) => Ok(Self::new(&text[..i], &text[i + 2..text.len() - 1])),
            _ => Err(Error::Parse(format!("column header `{text}` lacks a `[unit]` suffix"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub step: usize,
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

/// Column-oriented simulation log: one row per logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub meta: LogMeta,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
    pub events: Vec<TimedEvent>,
}

pub const LOG_FILE: &str = "log.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const META_FILE: &str = "meta.json";

impl SimLog {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .column_index(name)
            .ok_or_else(|| Error::UnknownQuantity(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// Applied inputs, one vector per logged row.
    pub fn inputs(&self) -> Result<Vec<DVector<f64>>> {
        let idx: Vec<usize> = (0..self.meta.inputs)
            .map(|i| self.column_index(&format!("u.{i}")).ok_or_else(|| Error::UnknownQuantity(format!("u.{i}"))))
            .collect::<Result<_>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i])))
            .collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(Column::header))
            .map_err(|e| Error::Parse(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes `log.csv`, `events.jsonl` and `meta.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join(LOG_FILE), self.to_csv()?).map_err(io)?;
        fs::write(dir.join(EVENTS_FILE), self.events_jsonl()).map_err(io)?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        let mut f = fs::File::create(dir.join(META_FILE)).map_err(io)?;
        writeln!(f, "{meta}").map_err(io)?;
        Ok(())
    }

    /// Reads a log written by [`SimLog::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let io = |path: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
        let meta_path = dir.join(META_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| io(&meta_path, e))?;
        let meta: LogMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?;

        let log_path = dir.join(LOG_FILE);
        let mut reader = csv::Reader::from_path(&log_path).map_err(|e| Error::Parse(format!("{}: {e}", log_path.display())))?;
        let columns = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(Column::parse_header)
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("{}: {e}", log_path.display())))?;
            let row = record
                .iter()
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("{} line {}: `{v}` is not a number", log_path.display(), line + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }

        let events_path = dir.join(EVENTS_FILE);
        let mut events = Vec::new();
        if events_path.exists() {
            let file = fs::File::open(&events_path).map_err(|e| io(&events_path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| io(&events_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                events.push(
                    serde_json::from_str(&line)
                        .map_err(|e| Error::Parse(format!("{} line {}: {e}", events_path.display(), i + 1)))?,
                );
            }
        }
        Ok(Self {
            meta,
            columns,
            rows,
            events,
        })
    }
}

fn coordinate_columns(plant: &Plant) -> Vec<(String, &'static str, &'static str)> {
    match plant.kind() {
        PlantKind::DoubleIntegratorChain { dim } => {
            (0..*dim).map(|i| (format!("q{i}"), "m", "m/s")).collect()
        }
        PlantKind::PlanarSnake(p) => {
            let mut cols = vec![
                ("x".to_string(), "m", "m/s"),
                ("y".to_string(), "m", "m/s"),
                ("psi".to_string(), "rad", "rad/s"),
            ];
            cols.extend((1..=p.joints()).map(|j| (format!("theta{j}"), "rad", "rad/s")));
            cols
        }
    }
}

fn input_units(plant: &Plant) -> Vec<&'static str> {
    match plant.kind() {
        PlantKind::DoubleIntegratorChain { dim } => vec!["N"; *dim],
        PlantKind::PlanarSnake(p) => {
            let mut units = vec!["N"; p.thrusters.len()];
            units.extend(vec!["N*m"; p.joints()]);
            units
        }
    }
}

fn plant_name(plant: &Plant) -> String {
    match plant.kind() {
        PlantKind::DoubleIntegratorChain { dim } => format!("double_integrator({dim})"),
        PlantKind::PlanarSnake(p) => format!("snake({} links)", p.links()),
    }
}

fn build_columns(plant: &Plant, hierarchy: &Hierarchy) -> Vec<Column> {
    let mut cols = vec![Column::new("t", "s")];
    let coords = coordinate_columns(plant);
    for (name, unit, _) in &coords {
        cols.push(Column::new(format!("q.{name}"), unit));
    }
    for (name, _, unit) in &coords {
        cols.push(Column::new(format!("v.{name}"), unit));
    }
    for (i, unit) in input_units(plant).iter().enumerate() {
        cols.push(Column::new(format!("u.{i}"), unit));
    }
    for (_, e) in hierarchy.equality_tasks() {
        let name = &e.task.name;
        for k in 0..e.task.dim() {
            cols.push(Column::new(format!("y.{name}.{k}"), "task"));
        }
        cols.push(Column::new(format!("V.{name}"), "task^2"));
        cols.push(Column::new(format!("Vdot.{name}"), "task^2/s"));
        cols.push(Column::new(format!("Vbound.{name}"), "task^2/s"));
        cols.push(Column::new(format!("delta.{name}"), "task^2/s"));
    }
    for (_, s) in hierarchy.set_tasks() {
        let name = &s.task.name;
        cols.push(Column::new(format!("h.{name}"), "task"));
        cols.push(Column::new(format!("sigma.{name}"), "task"));
        for j in 0..s.task.relative_degree() {
            cols.push(Column::new(format!("etab.{name}.{j}"), "task/s^k"));
        }
        cols.push(Column::new(format!("s.{name}"), "task/s^r"));
        cols.push(Column::new(format!("margin.{name}"), "task/s^r"));
    }
    for level in &hierarchy.levels {
        let n = level.index;
        cols.push(Column::new(format!("fallback.L{n}"), "-"));
        cols.push(Column::new(format!("iters.L{n}"), "-"));
        if n > 1 {
            cols.push(Column::new(format!("excess.L{n}"), "task^2/s"));
        }
    }
    cols.push(Column::new("control", "-"));
    cols
}

/// Builds one log row from the current state, the held input and the
/// report of the controller invocation that produced it.
fn build_row(
    t: f64,
    state: &PlantState,
    u: &DVector<f64>,
    clf: &[ClfStatus],
    sets: &[SetStatus],
    hierarchy: &Hierarchy,
    report: &ControlStepReport,
    controlled: bool,
) -> Vec<f64> {
    let mut row = vec![t];
    row.extend(state.xi.iter());
    row.extend(state.zeta.iter());
    row.extend(u.iter());
    let slack_of = |list: &[(String, f64)], name: &str| {
        list.iter().find(|(n, _)| n == name).map(|(_, v)| *v).unwrap_or(0.0)
    };
    for (c, (level, _)) in clf.iter().zip(hierarchy.equality_tasks()) {
        row.extend(c.y.iter());
        row.push(c.v);
        row.push(c.l_f + c.l_g.dot(u));
        row.push(-c.rate * c.v);
        row.push(slack_of(&report.levels[level - 1].deltas, &c.task));
    }
    for (s, (level, entry)) in sets.iter().zip(hierarchy.set_tasks()) {
        let slack = slack_of(&report.levels[level - 1].set_slacks, &s.task);
        row.push(s.h);
        row.push(entry.task.sigma(s.h));
        row.extend(s.eta_b.iter());
        row.push(slack);
        row.push(s.a_row.dot(u) + s.drift_margin + slack);
    }
    for l in &report.levels {
        row.push(if l.fallback { 1.0 } else { 0.0 });
        row.push(l.qp.iterations as f64);
        if l.index > 1 {
            row.push(l.frozen.iter().map(|r| r.excess()).fold(f64::NEG_INFINITY, f64::max).max(0.0));
        }
    }
    row.push(if controlled { 1.0 } else { 0.0 });
    row
}

/// Checks that the initial state lies in every set task's safe set.
pub fn check_initial_state(plant: &Plant, hierarchy: &Hierarchy, state: &PlantState) -> Result<()> {
    plant.check_state(state)?;
    for (_, s) in hierarchy.set_tasks() {
        let h = s.task.h(plant, state)?;
        if !(h >= 0.0) {
            return Err(Error::UnsafeInitialState {
                task: s.task.name.clone(),
                h,
            });
        }
    }
    Ok(())
}

fn meta_for(name: &str, plant: &Plant, hierarchy: &Hierarchy, bounds: &Bounds, config: &SimConfig) -> LogMeta {
    LogMeta {
        scenario: name.to_string(),
        plant: plant_name(plant),
        step: config.step,
        duration: config.duration,
        log_decimation: config.log_decimation,
        control_decimation: config.control_decimation,
        steps: 0,
        levels: hierarchy.levels.len(),
        inputs: plant.inputs(),
        u_max: bounds.u_max.iter().copied().collect(),
        du_max: bounds.du_max.iter().copied().collect(),
        tau_freeze: hierarchy.tau_freeze,
        equality: hierarchy
            .equality_tasks()
            .map(|(level, e)| EqualityMeta {
                name: e.task.name.clone(),
                level,
                dim: e.task.dim(),
                rate: e.clf.rate(),
                slack: e.slack,
            })
            .collect(),
        sets: hierarchy
            .set_tasks()
            .map(|(level, s)| SetMeta {
                name: s.task.name.clone(),
                level,
                relative_degree: s.task.relative_degree(),
                k_alpha: s.ecbf.k_alpha.iter().copied().collect(),
                slack_allowed: s.slack_allowed,
            })
            .collect(),
        abort: None,
    }
}

/// Hook called with every controller invocation's report.
pub type ReportHook<'a> = &'a mut dyn FnMut(usize, &PlantState, &ControlStepReport);

/// Simulates the closed loop from `initial`, starting with `u_prev = 0`.
///
/// Returns an error only when the run cannot start. A run that diverges or
/// whose plant evaluation fails midway returns the partial log with
/// `meta.abort` set.
pub fn run(
    name: &str,
    plant: &Plant,
    hierarchy: &Hierarchy,
    initial: &PlantState,
    bounds: &Bounds,
    config: &SimConfig,
) -> Result<SimLog> {
    run_with_hook(name, plant, hierarchy, initial, bounds, config, None)
}

#[allow(clippy::too_many_arguments)]
pub fn run_with_hook(
    name: &str,
    plant: &Plant,
    hierarchy: &Hierarchy,
    initial: &PlantState,
    bounds: &Bounds,
    config: &SimConfig,
    mut hook: Option<ReportHook<'_>>,
) -> Result<SimLog> {
    config.validate()?;
    check_initial_state(plant, hierarchy, initial)?;
    let p = plant.inputs();
    if bounds.u_max.len() != p || bounds.du_max.len() != p {
        return Err(Error::DimensionMismatch {
            what: "input bounds",
            expected: p,
            found: bounds.u_max.len().min(bounds.du_max.len()),
        });
    }

    let mut log = SimLog {
        meta: meta_for(name, plant, hierarchy, bounds, config),
        columns: build_columns(plant, hierarchy),
        rows: Vec::new(),
        events: Vec::new(),
    };
    let steps = config.steps();
    let mut state = initial.clone();
    state.t = 0.0;
    let mut u = DVector::zeros(p);
    let mut last_report: Option<ControlStepReport> = None;

    for k in 0..=steps {
        let t = k as f64 * config.step;
        state.t = t;
        let controlled = k % config.control_decimation == 0;
        let outcome = if controlled {
            hierarchy.control_step(plant, &state, &u, bounds).map(|(u_new, report)| {
                u = u_new;
                let (clf, sets) = (report.clf.clone(), report.sets.clone());
                if let Some(h) = hook.as_mut() {
                    h(k, &state, &report);
                }
                for event in &report.events {
                    log.events.push(TimedEvent {
                        step: k,
                        t,
                        event: event.clone(),
                    });
                }
                last_report = Some(report);
                (clf, sets)
            })
        } else {
            hierarchy.task_status(plant, &state)
        };
        let (clf, sets) = match outcome {
            Ok(v) => v,
            Err(e) => {
                log.meta.abort = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        if k % config.log_decimation == 0 || k == steps {
            let report = last_report.as_ref().expect("controller runs at step 0");
            log.rows.push(build_row(t, &state, &u, &clf, &sets, hierarchy, report, controlled));
        }
        if k == steps {
            break;
        }
        match plant_step(plant, &state, &u, config.step) {
            Ok(next) if next.is_finite() && next.norm() <= BLOWUP_NORM => {
                state = next;
                log.meta.steps = k + 1;
            }
            Ok(_) => {
                log.meta.abort = Some(Error::NumericalBlowup { t: t + config.step }.to_string());
                break;
            }
            Err(e) => {
                log.meta.abort = Some(format!("t = {t}: {e}"));
                break;
            }
        }
    }
    Ok(log)
}

/// Central-difference time derivative of a logged scalar, aligned with rows
/// `1..len−1`. Accepts a column name such as `V.ee` or `h.obstacle`.
pub fn probe_derivatives(log: &SimLog, quantity: &str) -> Result<Vec<f64>> {
    if !(quantity.starts_with("V.") || quantity.starts_with("h.")) {
        return Err(Error::UnknownQuantity(quantity.to_string()));
    }
    let values = log.series(quantity)?;
    let t = log.times();
    Ok((1..values.len().saturating_sub(1))
        .map(|i| (values[i + 1] - values[i - 1]) / (t[i + 1] - t[i - 1]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity (sign convention: the
    /// check passes when this is ≤ 0).
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tracks the worst violation `value − limit` over a series.
struct Worst {
    excess: f64,
    at: Option<(f64, String)>,
}

impl Worst {
    fn new() -> Self {
        Self {
            excess: f64::NEG_INFINITY,
            at: None,
        }
    }

    fn see(&mut self, excess: f64, t: f64, what: &str) {
        if excess > self.excess || excess.is_nan() {
            self.excess = if excess.is_nan() { f64::INFINITY } else { excess };
            self.at = Some((t, what.to_string()));
        }
    }

    fn check(self, name: &str) -> Check {
        let passed = self.excess <= 0.0;
        let detail = match &self.at {
            Some((t, what)) => format!("worst {what} at t = {t}"),
            None => "nothing to check".into(),
        };
        Check {
            name: name.to_string(),
            passed,
            worst: if self.excess.is_finite() { self.excess } else if passed { 0.0 } else { self.excess },
            detail,
        }
    }
}

/// Re-checks the closed-loop invariants on a log:
///
/// * `grid` — uniform time grid, finite values, run not aborted;
/// * `safety` — `h ≥ −1e-6` for every level-1 set task;
/// * `ecbf_rows` — level-1 ECBF rows hold without slack;
/// * `strict_priority` — frozen rows hold within `τ_freeze`;
/// * `clf_rows` — sampled `V̇ ≤ −(γ/ε)V + δ + 1e-5` wherever the task's
///   level was solved;
/// * `input_bounds`, `rate_bounds` — `|u| ≤ u_max`, `|Δu| ≤ Δu_max`;
/// * `zero_order_hold` — the input only changes at controller invocations.
pub fn verify(log: &SimLog) -> VerifyReport {
    let meta = &log.meta;
    let times = log.times();
    let mut checks = Vec::new();

    let mut grid = Worst::new();
    let dt = meta.step * meta.log_decimation as f64;
    let last = times.len().saturating_sub(1);
    for (i, t) in times.iter().enumerate() {
        let expected = if i == last && i > 0 {
            // The final row is logged even when off the decimation grid.
            times[i - 1] + (t - times[i - 1]).min(dt)
        } else {
            i as f64 * dt
        };
        grid.see((t - expected).abs() - 1e-9 * (1.0 + expected.abs()), *t, "time stamp");
    }
    for (row, t) in log.rows.iter().zip(&times) {
        if row.len() != log.columns.len() {
            grid.see(f64::INFINITY, *t, "row length");
        } else if row.iter().any(|v| !v.is_finite()) {
            grid.see(f64::INFINITY, *t, "non-finite value");
        }
    }
    if log.rows.is_empty() {
        grid.see(f64::INFINITY, 0.0, "empty log");
    }
    if let Some(reason) = &meta.abort {
        grid.see(f64::INFINITY, times.last().copied().unwrap_or(0.0), &format!("abort ({reason})"));
    }
    checks.push(grid.check("grid"));

    let series = |name: &str| log.series(name).unwrap_or_else(|_| vec![f64::NAN; log.rows.len()]);

    let mut safety = Worst::new();
    let mut rows = Worst::new();
    for s in meta.sets.iter().filter(|s| s.level == 1) {
        let h = series(&format!("h.{}", s.name));
        let margin = series(&format!("margin.{}", s.name));
        let fallback = series("fallback.L1");
        for i in 0..h.len() {
            safety.see(-h[i] - SAFETY_TOL, times[i], &format!("h.{}", s.name));
            if fallback[i] == 0.0 {
                rows.see(-margin[i] - meta.tau_freeze, times[i], &format!("margin.{}", s.name));
            }
        }
    }
    checks.push(safety.check("safety"));
    checks.push(rows.check("ecbf_rows"));

    let mut priority = Worst::new();
    for n in 2..=meta.levels {
        let name = format!("excess.L{n}");
        for (i, e) in series(&name).iter().enumerate() {
            priority.see(e - meta.tau_freeze, times[i], &name);
        }
    }
    checks.push(priority.check("strict_priority"));

    let mut decay = Worst::new();
    for e in &meta.equality {
        let vdot = series(&format!("Vdot.{}", e.name));
        let bound = series(&format!("Vbound.{}", e.name));
        let delta = series(&format!("delta.{}", e.name));
        let fallback = series(&format!("fallback.L{}", e.level));
        let control = series("control");
        for i in 0..vdot.len() {
            if fallback[i] == 0.0 && control[i] == 1.0 {
                let slack = if e.slack { delta[i] } else { 0.0 };
                decay.see(vdot[i] - bound[i] - slack - DECAY_TOL, times[i], &format!("Vdot.{}", e.name));
            }
        }
    }
    checks.push(decay.check("clf_rows"));

    let mut box_check = Worst::new();
    let mut rate_check = Worst::new();
    let mut hold = Worst::new();
    match log.inputs() {
        Ok(us) => {
            let control = series("control");
            for (i, u) in us.iter().enumerate() {
                for j in 0..u.len() {
                    let u_max = meta.u_max.get(j).copied().unwrap_or(f64::NAN);
                    box_check.see(u[j].abs() - u_max - BOUND_TOL, times[i], &format!("u.{j}"));
                    if i > 0 {
                        let du = (u[j] - us[i - 1][j]).abs();
                        // Controller invocations between the two logged rows.
                        let k0 = (times[i - 1] / meta.step).round() as usize;
                        let k1 = (times[i] / meta.step).round() as usize;
                        let updates = (k0 + 1..=k1).filter(|k| k % meta.control_decimation == 0).count();
                        let du_max = meta.du_max.get(j).copied().unwrap_or(f64::NAN);
                        let limit = if updates == 0 { 0.0 } else { updates as f64 * du_max };
                        rate_check.see(du - limit - BOUND_TOL, times[i], &format!("du.{j}"));
                        if meta.log_decimation == 1 && control[i] == 0.0 {
                            hold.see(du, times[i], &format!("u.{j} between controller calls"));
                        }
                    }
                }
            }
        }
        Err(e) => box_check.see(f64::INFINITY, 0.0, &e.to_string()),
    }
    checks.push(box_check.check("input_bounds"));
    checks.push(rate_check.check("rate_bounds"));
    checks.push(hold.check("zero_order_hold"));

    VerifyReport { checks }
}

/// Summary statistics written next to the log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub aborted: Option<String>,
    pub events: usize,
    pub level1_infeasible_steps: usize,
    pub min_h: Vec<(String, f64)>,
    pub final_error: Vec<(String, f64)>,
    pub checks: Vec<Check>,
}

/// Euclidean norm of a task's logged output at row `i`.
pub fn task_error(log: &SimLog, task: &str, dim: usize, i: usize) -> Result<f64> {
    let mut sum = 0.0;
    for k in 0..dim {
        let col = log
            .column_index(&format!("y.{task}.{k}"))
            .ok_or_else(|| Error::UnknownQuantity(format!("y.{task}.{k}")))?;
        sum += log.rows[i][col].powi(2);
    }
    Ok(sum.sqrt())
}

pub fn summarize(log: &SimLog, report: &VerifyReport) -> RunSummary {
    let min_h = log
        .meta
        .sets
        .iter()
        .map(|s| {
            let h = log.series(&format!("h.{}", s.name)).unwrap_or_default();
            (s.name.clone(), h.into_iter().fold(f64::INFINITY, f64::min))
        })
        .collect();
    let last = log.rows.len().saturating_sub(1);
    let final_error = log
        .meta
        .equality
        .iter()
        .map(|e| (e.name.clone(), task_error(log, &e.name, e.dim, last).unwrap_or(f64::NAN)))
        .collect();
    let level1_infeasible_steps = log
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::LevelInfeasible { level: 1 }))
        .count();
    RunSummary {
        scenario: log.meta.scenario.clone(),
        steps: log.meta.steps,
        aborted: log.meta.abort.clone(),
        events: log.events.len(),
        level1_infeasible_steps,
        min_h,
        final_error,
        checks: report.checks.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::PriorityLevel;

    #[test]
    fn rk3_matches_exponential_decay() {
        // One Bogacki–Shampine step multiplies by 1 − h + h²/2 − h³/6 on
        // ẋ = −x, so after 100 steps of 0.01 the gap to e⁻¹ is the
        // truncated fourth-order term accumulated: ≈ e⁻¹·h³/24 ≈ 1.5e-8.
        let h = 0.01;
        let mut x = DVector::from_element(1, 1.0);
        for k in 0..100 {
            x = rk3_step(&x, k as f64 * h, h, |_, x| Ok(-x)).unwrap();
        }
        let amplification: f64 = 1.0 - h + h * h / 2.0 - h * h * h / 6.0;
        assert!((x[0] - amplification.powi(100)).abs() < 1e-13);
        assert!((x[0] - (-1.0f64).exp()).abs() < 2e-8);
    }

    #[test]
    fn rk3_is_third_order() {
        let err = |h: f64| {
            let n = (1.0 / h).round() as usize;
            let mut x = DVector::from_element(1, 1.0);
            for k in 0..n {
                x = rk3_step(&x, k as f64 * h, h, |_, x| Ok(-x)).unwrap();
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }

    fn empty_hierarchy() -> Hierarchy {
        Hierarchy::new(vec![PriorityLevel {
            index: 1,
            equality: vec![],
            set: vec![],
        }])
        .unwrap()
    }

    #[test]
    fn zero_task_run_keeps_a_resting_plant_still() {
        let plant = Plant::double_integrator(2).unwrap();
        let initial = PlantState::at_rest(DVector::from_vec(vec![0.3, -0.7]));
        let config = SimConfig {
            step: 0.01,
            duration: 0.5,
            ..SimConfig::default()
        };
        let log = run("still", &plant, &empty_hierarchy(), &initial, &Bounds::unbounded(2), &config).unwrap();
        assert_eq!(log.rows.len(), 51);
        for row in &log.rows {
            assert_eq!(row[1], 0.3);
            assert_eq!(row[2], -0.7);
        }
        assert!(verify(&log).passed());
    }

    #[test]
    fn constant_series_has_zero_derivative() {
        let plant = Plant::double_integrator(1).unwrap();
        let initial = PlantState::at_rest(DVector::from_element(1, 1.0));
        let config = SimConfig {
            step: 0.01,
            duration: 0.1,
            ..SimConfig::default()
        };
        let mut log = run("c", &plant, &empty_hierarchy(), &initial, &Bounds::unbounded(1), &config).unwrap();
        log.columns.push(Column::new("h.const", "task"));
        for row in &mut log.rows {
            row.push(2.5);
        }
        let d = probe_derivatives(&log, "h.const").unwrap();
        assert_eq!(d.len(), log.rows.len() - 2);
        assert!(d.iter().all(|v| *v == 0.0));
        assert!(matches!(probe_derivatives(&log, "h.missing"), Err(Error::UnknownQuantity(_))));
        assert!(matches!(probe_derivatives(&log, "q.q0"), Err(Error::UnknownQuantity(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let plant = Plant::double_integrator(1).unwrap();
        let initial = PlantState::new(DVector::from_element(1, 0.1), DVector::from_element(1, 1.0 / 3.0), 0.0);
        let config = SimConfig {
            step: 0.01,
            duration: 0.05,
            ..SimConfig::default()
        };
        let log = run("rt", &plant, &empty_hierarchy(), &initial, &Bounds::unbounded(1), &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        log.write_dir(dir.path()).unwrap();
        let back = SimLog::read_dir(dir.path()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig {
            step: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let short = SimConfig {
            step: 0.1,
            duration: 0.05,
            ..SimConfig::default()
        };
        assert!(short.validate().is_err());
        assert_eq!(SimConfig::default().steps(), 1000);
    }
}
