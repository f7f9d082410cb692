//! Command-line front end: `run`, `verify`, `dump-qp`, `list-scenarios`.
//!
//! Exit codes: 0 success, 2 bad arguments or scenario, 3 level-1 QP
//! infeasible at every controller invocation, 4 invariant violation,
//! 5 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::error::Error;
use crate::hierarchy::Event;
use crate::scenario::{shipped, Built, Scenario, SHIPPED};
use crate::sim::{self, SimLog};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "taskprio", version, about = "Strict-priority CLF/ECBF QP control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ScenarioArgs {
    /// Scenario file, or the name of a shipped scenario.
    #[arg(long)]
    scenario: String,
    /// Seed for randomized initial conditions (`initial.jitter`).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the scenario's integration step (seconds).
    #[arg(long)]
    step_override: Option<f64>,
    /// Replace the scenario's duration (seconds).
    #[arg(long)]
    duration_override: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write log.csv, events.jsonl, meta.json and summary.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory (default: the scenario's output.dir, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check all closed-loop invariants on a written log directory.
    Verify {
        /// Directory written by `run`.
        #[arg(long)]
        log: PathBuf,
    },
    /// Write the QPs solved at one controller step in qp-dump format.
    DumpQp {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Integration step index at which the controller runs.
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// Only this priority level (default: all levels).
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the scenarios shipped with the tool.
    ListScenarios,
}

/// Loads a scenario by path, falling back to the shipped scenario names.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, String> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()));
    }
    shipped(spec).ok_or_else(|| {
        let names: Vec<&str> = SHIPPED.iter().map(|(n, _)| *n).collect();
        format!(
            "no scenario file `{spec}` and no shipped scenario of that name (shipped: {})",
            names.join(", ")
        )
    })
}

fn prepare(args: &ScenarioArgs) -> Result<(Scenario, Built), (i32, String)> {
    let mut scenario = resolve_scenario(&args.scenario).map_err(|e| (EXIT_PARSE, e))?;
    if let Some(step) = args.step_override {
        scenario.sim.step = step;
    }
    if let Some(duration) = args.duration_override {
        scenario.sim.duration = duration;
    }
    let built = scenario.build(args.seed).map_err(|e| (EXIT_PARSE, e.to_string()))?;
    Ok((scenario, built))
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run { scenario, out } => cmd_run(&scenario, out),
        Command::Verify { log } => cmd_verify(&log),
        Command::DumpQp {
            scenario,
            step,
            level,
            out,
        } => cmd_dump_qp(&scenario, step, level, &out),
        Command::ListScenarios => {
            for (name, _) in SHIPPED {
                let s = shipped(name).expect("shipped");
                println!("{name:<28} {}", s.description);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err((code, message)) => {
            eprintln!("error: {message}");
            code
        }
    }
}

fn write_err(e: impl std::fmt::Display) -> (i32, String) {
    (EXIT_NUMERICAL, format!("cannot write output: {e}"))
}

fn cmd_run(args: &ScenarioArgs, out: Option<PathBuf>) -> Result<(), (i32, String)> {
    let (scenario, built) = prepare(args)?;
    let out = out
        .or_else(|| scenario.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&scenario.name));
    let log = sim::run(
        &scenario.name,
        &built.plant,
        &built.hierarchy,
        &built.initial,
        &built.bounds,
        &built.config,
    )
    .map_err(|e| (EXIT_PARSE, e.to_string()))?;
    log.write_dir(&out).map_err(write_err)?;
    let report = sim::verify(&log);
    let summary = sim::summarize(&log, &report);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out.join("summary.json"), text + "\n").map_err(write_err)?;

    println!("scenario {} -> {}", scenario.name, out.display());
    println!("steps {}  events {}", log.meta.steps, log.events.len());
    for (task, err) in &summary.final_error {
        println!("final |y| {task:<24} {err:.3e}");
    }
    for (task, h) in &summary.min_h {
        println!("min h     {task:<24} {h:.3e}");
    }
    for c in &report.checks {
        println!("{:<16} {}  worst {:.3e}", c.name, if c.passed { "ok" } else { "FAIL" }, c.worst);
    }

    if let Some(reason) = &log.meta.abort {
        return Err((EXIT_NUMERICAL, format!("run aborted: {reason}")));
    }
    let controller_calls = (0..=log.meta.steps).filter(|k| k % log.meta.control_decimation == 0).count();
    let infeasible = log
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::LevelInfeasible { level: 1 }))
        .count();
    if controller_calls > 0 && infeasible >= controller_calls {
        return Err((EXIT_INFEASIBLE, "level-1 QP infeasible at every controller step".into()));
    }
    if !report.passed() {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err((EXIT_VIOLATION, format!("invariant violated: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_verify(dir: &Path) -> Result<(), (i32, String)> {
    let log = SimLog::read_dir(dir).map_err(|e| (EXIT_PARSE, e.to_string()))?;
    let report = sim::verify(&log);
    for c in &report.checks {
        println!(
            "{:<16} {}  worst {:.3e}  {}",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.worst,
            c.detail
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err((EXIT_VIOLATION, format!("invariant violated: {}", failed.join(", "))))
    }
}

/// File name used by `dump-qp` for one level.
pub fn dump_file_name(step: usize, level: usize) -> String {
    format!("qp_step{step}_level{level}.txt")
}

fn cmd_dump_qp(args: &ScenarioArgs, step: usize, level: Option<usize>, out: &Path) -> Result<(), (i32, String)> {
    let (scenario, built) = prepare(args)?;
    let mut config = built.config;
    if step % config.control_decimation != 0 {
        return Err((
            EXIT_PARSE,
            format!("the controller does not run at step {step} (control_decimation = {})", config.control_decimation),
        ));
    }
    if let Some(l) = level {
        if l == 0 || l > built.hierarchy.levels.len() {
            return Err((EXIT_PARSE, format!("level {l} does not exist")));
        }
    }
    config.duration = step.max(1) as f64 * config.step;
    // Replay the run up to `step`, remembering the state there and the input
    // applied just before it.
    let mut at_step = None;
    let mut u_before = DVector::zeros(built.plant.inputs());
    let mut hook = |k: usize, state: &crate::model::PlantState, report: &crate::hierarchy::ControlStepReport| {
        if k == step {
            at_step = Some(state.clone());
        } else if k < step {
            u_before = report.u_applied.clone();
        }
    };
    let log = sim::run_with_hook(
        &scenario.name,
        &built.plant,
        &built.hierarchy,
        &built.initial,
        &built.bounds,
        &config,
        Some(&mut hook),
    )
    .map_err(|e| (EXIT_PARSE, e.to_string()))?;
    let state = at_step.ok_or_else(|| {
        (
            EXIT_NUMERICAL,
            format!("run stopped before step {step}: {}", log.meta.abort.unwrap_or_default()),
        )
    })?;
    let (_, report) = built
        .hierarchy
        .control_step_with(&built.plant, &state, &u_before, &built.bounds, true)
        .map_err(|e: Error| (EXIT_NUMERICAL, e.to_string()))?;
    fs::create_dir_all(out).map_err(write_err)?;
    for l in &report.levels {
        if level.is_some_and(|want| want != l.index) {
            continue;
        }
        let problem = l.problem.as_ref().expect("problems captured");
        let path = out.join(dump_file_name(step, l.index));
        fs::write(&path, problem.dump()).map_err(write_err)?;
        println!("{}", path.display());
    }
    Ok(())
}
