//! End-to-end behavior of the command-line entry point.

use std::fs;
use std::path::Path;

use taskprio::cli::{dump_file_name, run_command, EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, EXIT_VIOLATION};
use taskprio::qpsolver::{solve_default, QpProblem, QpStatus};

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("taskprio").chain(args.iter().copied()))
}

fn run_into(scenario: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["run", "--scenario", scenario, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn repeated_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_into("double_integrator_barrier", &a, &[]), EXIT_OK);
    assert_eq!(run_into("double_integrator_barrier", &b, &[]), EXIT_OK);
    for file in ["log.csv", "events.jsonl", "meta.json", "summary.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn verify_accepts_a_clean_log_and_rejects_a_tampered_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("barrier");
    assert_eq!(run_into("double_integrator_barrier", &out, &["--duration-override", "2"]), EXIT_OK);
    let log = out.to_str().unwrap();
    assert_eq!(run(&["verify", "--log", log]), EXIT_OK);

    // Push the barrier below zero on one logged row.
    let path = out.join("log.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let column = lines[0].split(',').position(|c| c.starts_with("h.floor ")).expect("h.floor column");
    let mut cells: Vec<String> = lines[10].split(',').map(String::from).collect();
    cells[column] = "-0.01".into();
    lines[10] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert_eq!(run(&["verify", "--log", log]), EXIT_VIOLATION);
}

#[test]
fn malformed_input_exits_with_the_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run_into("no_such_scenario", &out, &[]), EXIT_PARSE);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"bad\"\n[plant]\nkind = \"teapot\"\n").unwrap();
    assert_eq!(run_into(bad.to_str().unwrap(), &out, &[]), EXIT_PARSE);

    assert_eq!(run(&["run", "--bogus-flag"]), EXIT_PARSE);
    assert_eq!(run(&["verify", "--log", dir.path().join("missing").to_str().unwrap()]), EXIT_PARSE);
}

#[test]
fn unreachable_braking_exits_as_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("squeeze.toml");
    fs::write(
        &scenario,
        r#"
name = "squeeze"

[plant]
kind = "double_integrator"
dim = 1

[initial]
q = [0.5]
v = [-5.0]

# Braking in time needs u ≥ 18.5 at the start.
[bounds]
u_max = 1.0

[sim]
step = 0.01
duration = 0.5

[[task]]
type = "coordinate_lower"
name = "floor"
level = 1
index = 0
bound = 0.0
k_alpha = [3.0, 4.0]
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_into(scenario.to_str().unwrap(), &out, &[]), EXIT_INFEASIBLE);
}

#[test]
fn dumped_qps_load_back_and_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dump");
    let code = run(&[
        "dump-qp",
        "--scenario",
        "snake_paper_shaped",
        "--step",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    for level in 1..=3 {
        let text = fs::read_to_string(out.join(dump_file_name(20, level))).unwrap();
        let problem = QpProblem::load(&text).unwrap();
        assert_eq!(problem.dump(), text, "level {level} round trip");
        let solution = solve_default(&problem).unwrap();
        assert_eq!(solution.status, QpStatus::Optimal, "level {level}");
    }
    assert_eq!(
        run(&["dump-qp", "--scenario", "snake_paper_shaped", "--level", "9", "--out", out.to_str().unwrap()]),
        EXIT_PARSE
    );
}

#[test]
fn list_scenarios_succeeds() {
    assert_eq!(run(&["list-scenarios"]), EXIT_OK);
}
