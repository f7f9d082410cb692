//! Scenario files: plant, tasks, priority levels, bounds and simulation
//! settings in TOML.
//!
//! ```toml
//! name = "example"
//! description = "free text"
//!
//! [plant]
//! kind = "double_integrator"   # or "snake" (optional overrides below)
//! dim = 1
//!
//! [initial]
//! q = [1.0]          # configuration, one entry per coordinate
//! v = [0.0]          # optional, defaults to zero
//! jitter = 0.0       # optional uniform perturbation of q, drawn from --seed
//!
//! [bounds]           # optional; scalars apply to every input
//! u_max = 50.0
//! du_max = 0.1       # per controller update
//!
//! [sim]
//! step = 0.01
//! duration = 10.0
//! log_decimation = 1
//! control_decimation = 1
//!
//! [controller]       # optional
//! input_regularization = 0.0
//! clf_literal_form = false
//!
//! [[task]]
//! type = "position"  # position | velocity | obstacle | joint_limits |
//!                    # coordinate_lower | coordinate_upper |
//!                    # velocity_lower | velocity_upper | actuation
//! name = "x"
//! level = 1
//! frame = { coordinate = 0 }   # or "base", "end_effector", "identity", { link_com = 1 }
//! target = [0.0]     # or schedule = [{ t = 0.0, target = [..] }, ..]
//! eps = 0.5
//! weight = 60.0
//! ```
//!
//! Set tasks carry `k_alpha` (one gain per derivative of `h`, lowest order
//! first), an optional slack penalty `kappa` and `slack = true|false`.
//! Angles are in radians.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{make_ecbf, validate_kalpha};
use crate::clf::make_res_clf;
use crate::error::{Error, Result};
use crate::hierarchy::{Bounds, EqualityEntry, Hierarchy, PriorityLevel, SetEntry};
use crate::model::{Frame, Plant, PlantState, SnakeParams, Thruster};
use crate::sim::{check_initial_state, SimConfig};
use crate::tasks::{
    make_actuation_task, make_coordinate_limit_tasks, make_joint_limit_tasks, make_obstacle_task,
    make_position_task_scheduled, make_velocity_bound_task, make_velocity_task, EqualityTask, Schedule,
    SetTask,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    DoubleIntegrator {
        dim: usize,
    },
    /// Planar snake; omitted fields take the three-link defaults.
    Snake {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link_lengths: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link_masses: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        damping: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gravity: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thrusters: Option<Vec<Thruster>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default)]
    pub jitter: f64,
}

/// A limit given once for all inputs or per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Limit {
    Uniform(f64),
    PerInput(Vec<f64>),
}

impl Limit {
    fn expand(&self, p: usize) -> Vec<f64> {
        match self {
            Limit::Uniform(v) => vec![*v; p],
            Limit::PerInput(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<Limit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_max: Option<Limit>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default)]
    pub input_regularization: f64,
    #[serde(default)]
    pub clf_literal_form: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePoint {
    pub t: f64,
    pub target: Vec<f64>,
}

fn default_true() -> bool {
    true
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Position {
        name: String,
        level: usize,
        frame: Frame,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule: Option<Vec<SchedulePoint>>,
        eps: f64,
        weight: f64,
        #[serde(default = "default_true")]
        slack: bool,
    },
    Velocity {
        name: String,
        level: usize,
        coordinates: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Vec<f64>>,
        eps: f64,
        weight: f64,
        #[serde(default = "default_true")]
        slack: bool,
    },
    Obstacle {
        name: String,
        level: usize,
        frame: Frame,
        center: Vec<f64>,
        radius: f64,
        margin: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    JointLimits {
        name: String,
        level: usize,
        min: Vec<f64>,
        max: Vec<f64>,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    CoordinateLower {
        name: String,
        level: usize,
        index: usize,
        bound: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    CoordinateUpper {
        name: String,
        level: usize,
        index: usize,
        bound: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    VelocityLower {
        name: String,
        level: usize,
        index: usize,
        bound: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    VelocityUpper {
        name: String,
        level: usize,
        index: usize,
        bound: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
    Actuation {
        name: String,
        level: usize,
        sigma_min: f64,
        k_alpha: Vec<f64>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        slack: bool,
    },
}

/// Gains shared by all set-task variants.
struct SetGains<'a> {
    k_alpha: &'a [f64],
    kappa: f64,
    slack: bool,
}

impl TaskSpec {
    pub fn name(&self) -> &str {
        match self {
            TaskSpec::Position { name, .. }
            | TaskSpec::Velocity { name, .. }
            | TaskSpec::Obstacle { name, .. }
            | TaskSpec::JointLimits { name, .. }
            | TaskSpec::CoordinateLower { name, .. }
            | TaskSpec::CoordinateUpper { name, .. }
            | TaskSpec::VelocityLower { name, .. }
            | TaskSpec::VelocityUpper { name, .. }
            | TaskSpec::Actuation { name, .. } => name,
        }
    }

    pub fn level(&self) -> usize {
        match self {
            TaskSpec::Position { level, .. }
            | TaskSpec::Velocity { level, .. }
            | TaskSpec::Obstacle { level, .. }
            | TaskSpec::JointLimits { level, .. }
            | TaskSpec::CoordinateLower { level, .. }
            | TaskSpec::CoordinateUpper { level, .. }
            | TaskSpec::VelocityLower { level, .. }
            | TaskSpec::VelocityUpper { level, .. }
            | TaskSpec::Actuation { level, .. } => *level,
        }
    }

    fn set_gains(&self) -> Option<SetGains<'_>> {
        match self {
            TaskSpec::Position { .. } | TaskSpec::Velocity { .. } => None,
            TaskSpec::Obstacle { k_alpha, kappa, slack, .. }
            | TaskSpec::JointLimits { k_alpha, kappa, slack, .. }
            | TaskSpec::CoordinateLower { k_alpha, kappa, slack, .. }
            | TaskSpec::CoordinateUpper { k_alpha, kappa, slack, .. }
            | TaskSpec::VelocityLower { k_alpha, kappa, slack, .. }
            | TaskSpec::VelocityUpper { k_alpha, kappa, slack, .. }
            | TaskSpec::Actuation { k_alpha, kappa, slack, .. } => Some(SetGains {
                k_alpha,
                kappa: *kappa,
                slack: *slack,
            }),
        }
    }
}

/// One problem found while parsing or validating a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// 1-based line in the scenario text, when it can be located.
    pub line: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.reason),
            None => write!(f, "{}: {}", self.field, self.reason),
        }
    }
}

/// Parsing failed (`Parse`) or a well-formed file broke a rule (`Invalid`).
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    Parse(Vec<Diagnostic>),
    Invalid(Vec<Diagnostic>),
}

impl ScenarioError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ScenarioError::Parse(d) | ScenarioError::Invalid(d) => d,
        }
    }
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            ScenarioError::Parse(_) => "parse error",
            ScenarioError::Invalid(_) => "invalid scenario",
        };
        writeln!(f, "{kind}:")?;
        for d in self.diagnostics() {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

impl From<ScenarioError> for Error {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Parse(_) => Error::Parse(e.to_string()),
            ScenarioError::Invalid(_) => Error::Validation(e.to_string()),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Locates `field` inside the `index`-th `[[task]]` block (or the task
/// header itself when the field is absent).
fn task_line(text: &str, index: usize, field: &str) -> Option<usize> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[task]]")
        .nth(index)
        .map(|(i, _)| i)?;
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim_start().starts_with('['))
        .map_or(lines.len(), |p| start + 1 + p);
    let hit = lines[start + 1..end].iter().position(|l| {
        let l = l.trim_start();
        l.starts_with(field) && l[field.len()..].trim_start().starts_with('=')
    });
    Some(hit.map_or(start, |p| start + 1 + p) + 1)
}

/// Locates `key` inside the `[section]` table.
fn section_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.trim() == header)?;
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim_start().starts_with('['))
        .map_or(lines.len(), |p| start + 1 + p);
    let hit = lines[start + 1..end].iter().position(|l| {
        let l = l.trim_start();
        l.starts_with(key) && l[key.len()..].trim_start().starts_with('=')
    });
    Some(hit.map_or(start, |p| start + 1 + p) + 1)
}

/// A ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Built {
    pub plant: Plant,
    pub hierarchy: Hierarchy,
    pub initial: PlantState,
    pub bounds: Bounds,
    pub config: SimConfig,
}

impl Scenario {
    /// Parses and validates scenario text.
    pub fn parse(text: &str) -> std::result::Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            ScenarioError::Parse(vec![Diagnostic {
                line: e.span().map(|s| line_of_offset(text, s.start)),
                field: "toml".into(),
                reason: e.message().trim().to_string(),
            }])
        })?;
        let mut diagnostics = scenario.check();
        for d in &mut diagnostics {
            d.line = locate(text, &d.field);
        }
        if diagnostics.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(diagnostics))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn load(path: &std::path::Path) -> std::result::Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ScenarioError::Parse(vec![Diagnostic {
                line: None,
                field: path.display().to_string(),
                reason: e.to_string(),
            }])
        })?;
        Self::parse(&text)
    }

    /// Validation rules that do not need the plant to be built.
    pub fn check(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut bad = |field: String, reason: String| {
            out.push(Diagnostic {
                line: None,
                field,
                reason,
            })
        };
        if let Err(e) = self.sim.validate() {
            bad("sim".into(), e.to_string());
        }
        if !(self.controller.input_regularization >= 0.0) {
            bad("controller.input_regularization".into(), "must be >= 0".into());
        }
        if !(self.initial.jitter >= 0.0) || !self.initial.jitter.is_finite() {
            bad("initial.jitter".into(), "must be >= 0".into());
        }
        for (key, limit) in [("u_max", &self.bounds.u_max), ("du_max", &self.bounds.du_max)] {
            let values = match limit {
                Some(Limit::Uniform(v)) => vec![*v],
                Some(Limit::PerInput(v)) => v.clone(),
                None => vec![],
            };
            if values.iter().any(|v| !(*v > 0.0)) {
                bad(format!("bounds.{key}"), "limits must be > 0".into());
            }
        }

        let max_level = self.tasks.iter().map(TaskSpec::level).max().unwrap_or(0);
        for n in 1..=max_level {
            if !self.tasks.iter().any(|t| t.level() == n) {
                bad(
                    "task.level".into(),
                    format!("priority levels must be contiguous from 1; level {n} has no tasks"),
                );
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let field = |f: &str| format!("task[{i}].{f}");
            if task.level() == 0 {
                bad(field("level"), "levels start at 1".into());
            }
            if !names.insert(task.name().to_string()) {
                bad(field("name"), format!("duplicate task name `{}`", task.name()));
            }
            match task {
                TaskSpec::Position {
                    eps,
                    weight,
                    target,
                    schedule,
                    ..
                } => {
                    check_equality_gains(*eps, *weight, &field, &mut bad);
                    match (target, schedule) {
                        (Some(_), None) => {}
                        (None, Some(points)) => {
                            if let Err(e) = schedule_of(points) {
                                bad(field("schedule"), e.to_string());
                            }
                        }
                        _ => bad(field("target"), "give exactly one of `target` and `schedule`".into()),
                    }
                }
                TaskSpec::Velocity { eps, weight, .. } => check_equality_gains(*eps, *weight, &field, &mut bad),
                _ => {}
            }
            if let Some(gains) = task.set_gains() {
                if !(gains.kappa > 0.0) || !gains.kappa.is_finite() {
                    bad(field("kappa"), "must be > 0".into());
                }
                if task.level() == 1 && gains.slack {
                    bad(field("slack"), "set tasks at level 1 cannot have slack".into());
                }
                let r = match task {
                    TaskSpec::VelocityLower { .. } | TaskSpec::VelocityUpper { .. } => 1,
                    _ => 2,
                };
                if let Err(e) = validate_kalpha(&DVector::from_column_slice(gains.k_alpha), r) {
                    bad(field("k_alpha"), e.to_string());
                }
            }
        }
        out
    }

    /// Builds the plant, the hierarchy and the initial state. `seed` only
    /// matters when `initial.jitter > 0`.
    pub fn build(&self, seed: u64) -> Result<Built> {
        let diagnostics = self.check();
        if !diagnostics.is_empty() {
            return Err(ScenarioError::Invalid(diagnostics).into());
        }
        let plant = self.plant.build()?;
        let n = plant.dof();
        let p = plant.inputs();
        let invalid = |field: &str, reason: String| Error::Validation(format!("{field}: {reason}"));

        if self.initial.q.len() != n {
            return Err(invalid("initial.q", format!("expected {n} entries, got {}", self.initial.q.len())));
        }
        let mut q = DVector::from_column_slice(&self.initial.q);
        if self.initial.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in q.iter_mut() {
                *v += rng.random_range(-self.initial.jitter..=self.initial.jitter);
            }
        }
        let v = match &self.initial.v {
            Some(v) if v.len() != n => {
                return Err(invalid("initial.v", format!("expected {n} entries, got {}", v.len())));
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(n),
        };
        let initial = PlantState::new(q, v, 0.0);

        let limit = |field: &str, l: &Option<Limit>| -> Result<DVector<f64>> {
            let values = l.as_ref().map_or(vec![f64::INFINITY; p], |l| l.expand(p));
            if values.len() != p {
                return Err(invalid(field, format!("expected {p} entries, got {}", values.len())));
            }
            Ok(DVector::from_vec(values))
        };
        let bounds = Bounds {
            u_max: limit("bounds.u_max", &self.bounds.u_max)?,
            du_max: limit("bounds.du_max", &self.bounds.du_max)?,
        };

        let levels = self.tasks.iter().map(TaskSpec::level).max().unwrap_or(0).max(1);
        let mut hierarchy_levels: Vec<PriorityLevel> = (1..=levels)
            .map(|index| PriorityLevel {
                index,
                equality: Vec::new(),
                set: Vec::new(),
            })
            .collect();
        for task in &self.tasks {
            let level = &mut hierarchy_levels[task.level() - 1];
            let wrap = |e: Error| Error::Validation(format!("task `{}`: {e}", task.name()));
            match task {
                TaskSpec::Position { .. } | TaskSpec::Velocity { .. } => {
                    let (t, eps, weight, slack) = equality_task(&plant, task).map_err(wrap)?;
                    let mut clf = make_res_clf(t.rho(), t.dim(), eps, None).map_err(wrap)?;
                    clf.literal_form = self.controller.clf_literal_form;
                    level.equality.push(EqualityEntry {
                        task: t,
                        clf,
                        weight,
                        slack,
                    });
                }
                _ => {
                    let gains = task.set_gains().expect("set task");
                    for t in set_tasks(&plant, task).map_err(wrap)? {
                        let ecbf = make_ecbf(DVector::from_column_slice(gains.k_alpha), t.relative_degree())
                            .map_err(wrap)?;
                        level.set.push(SetEntry {
                            task: t,
                            ecbf,
                            kappa: gains.kappa,
                            slack_allowed: gains.slack,
                        });
                    }
                }
            }
        }
        let mut hierarchy = Hierarchy::new(hierarchy_levels)?;
        hierarchy.input_regularization = self.controller.input_regularization;
        check_initial_state(&plant, &hierarchy, &initial)?;
        Ok(Built {
            plant,
            hierarchy,
            initial,
            bounds,
            config: self.sim,
        })
    }
}

fn locate(text: &str, field: &str) -> Option<usize> {
    if let Some(rest) = field.strip_prefix("task[") {
        let (index, tail) = rest.split_once(']')?;
        let key = tail.trim_start_matches('.');
        return task_line(text, index.parse().ok()?, key);
    }
    if field == "task.level" {
        return text.lines().position(|l| l.trim() == "[[task]]").map(|i| i + 1);
    }
    match field.split_once('.') {
        Some((section, key)) => section_line(text, section, key),
        None => section_line(text, field, "\u{0}"),
    }
}

fn check_equality_gains(eps: f64, weight: f64, field: &dyn Fn(&str) -> String, bad: &mut dyn FnMut(String, String)) {
    if !(eps > 0.0) || !eps.is_finite() {
        bad(field("eps"), "must be > 0".into());
    }
    if !(weight > 0.0) || !weight.is_finite() {
        bad(field("weight"), "must be > 0".into());
    }
}

fn schedule_of(points: &[SchedulePoint]) -> Result<Schedule> {
    Schedule::piecewise(
        points
            .iter()
            .map(|p| (p.t, DVector::from_column_slice(&p.target)))
            .collect(),
    )
}

fn equality_task(plant: &Plant, spec: &TaskSpec) -> Result<(EqualityTask, f64, f64, bool)> {
    match spec {
        TaskSpec::Position {
            name,
            frame,
            target,
            schedule,
            eps,
            weight,
            slack,
            ..
        } => {
            let reference = match (target, schedule) {
                (Some(t), _) => Schedule::constant(DVector::from_column_slice(t)),
                (None, Some(points)) => schedule_of(points)?,
                (None, None) => return Err(Error::InvalidTask("position task needs a target".into())),
            };
            let task = make_position_task_scheduled(plant, name, frame.clone(), reference)?;
            Ok((task, *eps, *weight, *slack))
        }
        TaskSpec::Velocity {
            name,
            coordinates,
            target,
            eps,
            weight,
            slack,
            ..
        } => {
            let target = target.as_ref().map(|t| DVector::from_column_slice(t));
            let task = make_velocity_task(plant, name, coordinates.clone(), target)?;
            Ok((task, *eps, *weight, *slack))
        }
        _ => Err(Error::InvalidTask(format!("`{}` is a set task", spec.name()))),
    }
}

fn set_tasks(plant: &Plant, spec: &TaskSpec) -> Result<Vec<SetTask>> {
    let one = |t: SetTask| Ok(vec![t]);
    let coordinate = |name: &str, index: usize, bound: f64, upper: bool| -> Result<Vec<SetTask>> {
        let (lower, upper_b) = if upper {
            (f64::NEG_INFINITY, bound)
        } else {
            (bound, f64::INFINITY)
        };
        let tasks = make_coordinate_limit_tasks(
            plant,
            name,
            &[index],
            &DVector::from_element(1, lower),
            &DVector::from_element(1, upper_b),
        )?;
        let keep = if upper { 1 } else { 0 };
        let mut task = tasks.into_iter().nth(keep).expect("two tasks");
        task.name = name.to_string();
        Ok(vec![task])
    };
    match spec {
        TaskSpec::Obstacle {
            name,
            frame,
            center,
            radius,
            margin,
            ..
        } => one(make_obstacle_task(
            plant,
            name,
            frame.clone(),
            DVector::from_column_slice(center),
            *radius,
            *margin,
        )?),
        TaskSpec::JointLimits { name, min, max, .. } => make_joint_limit_tasks(
            plant,
            name,
            &DVector::from_column_slice(min),
            &DVector::from_column_slice(max),
        ),
        TaskSpec::CoordinateLower { name, index, bound, .. } => coordinate(name, *index, *bound, false),
        TaskSpec::CoordinateUpper { name, index, bound, .. } => coordinate(name, *index, *bound, true),
        TaskSpec::VelocityLower { name, index, bound, .. } => {
            one(make_velocity_bound_task(plant, name, *index, *bound, false)?)
        }
        TaskSpec::VelocityUpper { name, index, bound, .. } => {
            one(make_velocity_bound_task(plant, name, *index, *bound, true)?)
        }
        TaskSpec::Actuation { name, sigma_min, .. } => one(make_actuation_task(plant, name, *sigma_min)?),
        TaskSpec::Position { .. } | TaskSpec::Velocity { .. } => {
            Err(Error::InvalidTask(format!("`{}` is an equality task", spec.name())))
        }
    }
}

impl PlantSpec {
    pub fn build(&self) -> Result<Plant> {
        match self {
            PlantSpec::DoubleIntegrator { dim } => Plant::double_integrator(*dim),
            PlantSpec::Snake {
                link_lengths,
                link_masses,
                damping,
                gravity,
                thrusters,
            } => {
                let mut params = SnakeParams::three_link();
                if let Some(l) = link_lengths {
                    params.link_lengths = l.clone();
                }
                if let Some(m) = link_masses {
                    params.link_masses = m.clone();
                }
                if link_lengths.is_some() || link_masses.is_some() {
                    if params.link_lengths.len() != params.link_masses.len() {
                        return Err(Error::Validation(
                            "plant: link_lengths and link_masses must have the same length".into(),
                        ));
                    }
                    // Slender rods about their centers of mass.
                    params.link_inertias = params
                        .link_lengths
                        .iter()
                        .zip(&params.link_masses)
                        .map(|(l, m)| m * l * l / 12.0)
                        .collect();
                }
                if let Some(d) = damping {
                    params.damping = d.clone();
                }
                if let Some(g) = gravity {
                    params.gravity = *g;
                }
                if let Some(t) = thrusters {
                    params.thrusters = t.clone();
                }
                Plant::snake(params)
            }
        }
    }
}

/// Scenarios shipped with the crate: `(name, TOML text)`.
pub const SHIPPED: &[(&str, &str)] = &[
    (
        "double_integrator_decay",
        include_str!("../scenarios/double_integrator_decay.toml"),
    ),
    (
        "double_integrator_barrier",
        include_str!("../scenarios/double_integrator_barrier.toml"),
    ),
    ("snake_paper_shaped", include_str!("../scenarios/snake_paper_shaped.toml")),
    (
        "snake_incompatible_base",
        include_str!("../scenarios/snake_incompatible_base.toml"),
    ),
];

pub fn shipped(name: &str) -> Option<Scenario> {
    SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::parse(text).expect("shipped scenarios are valid"))
}
