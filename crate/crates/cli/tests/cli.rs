//! End-to-end tests that drive the compiled `tapsolve` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tapsolve_core::scenario::two_route;
use tapsolve_core::{CostMode, ModelKind};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tapsolve"))
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary failed to run")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Strip every `wall_ms` entry from a parsed report so that two runs of the
/// same scenario can be compared exactly.
fn without_timings(mut report: Value) -> Value {
    fn scrub(value: &mut Value) {
        match value {
            Value::Object(map) => {
                map.remove("wall_ms");
                for v in map.values_mut() {
                    scrub(v);
                }
            }
            Value::Array(items) => {
                for v in items.iter_mut() {
                    scrub(v);
                }
            }
            _ => {}
        }
    }
    scrub(&mut report);
    report
}

/// Drop the trailing `wall_ms` column from an iterations CSV.
fn without_timing_column(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rsplit_once(',') {
            Some((head, _)) => head.to_string(),
            None => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn solve_writes_every_output_and_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "solve",
        scenario_path("two_route_static.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&result.stdout),
        String::from_utf8_lossy(&result.stderr)
    );

    for name in [
        "assignment.csv",
        "path_costs.csv",
        "iterations.csv",
        "metrics.csv",
        "report.json",
    ] {
        assert!(out.path().join(name).exists(), "{name} missing");
    }
    assert!(
        !out.path().join("state.csv").exists(),
        "static runs have no vehicle states to write"
    );

    let report: Value = serde_json::from_str(&read(&out.path().join("report.json"))).unwrap();
    assert_eq!(report["scenario"], "two_route_static");
    assert_eq!(report["converged"], Value::Bool(true));
    assert!(report["gap"].as_f64().unwrap() <= 1e-4);

    let assignment = read(&out.path().join("assignment.csv"));
    let mut lines = assignment.lines();
    assert_eq!(lines.next(), Some("path_id,timestep,value_vph"));
    assert_eq!(lines.count(), 3, "one row per path on the one-step grid");
}

#[test]
fn solve_writes_states_for_dynamic_models_and_applies_overrides() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "solve",
        scenario_path("two_route_dynamic.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--model",
        "mn",
        "--max-iters",
        "50",
    ]);
    assert!(result.status.success(), "{result:?}");

    assert!(out.path().join("state.csv").exists());
    let state = read(&out.path().join("state.csv"));
    assert!(state.starts_with("link_id,path_id,timestep,vehicles,inflow_veh,outflow_veh"));

    let report: Value = serde_json::from_str(&read(&out.path().join("report.json"))).unwrap();
    assert_eq!(report["config"]["model"], "mn");
    let overrides: Vec<String> = report["overrides"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(overrides.contains(&"model=mn".to_string()), "{overrides:?}");
    assert!(
        overrides.contains(&"params.max_iters=50".to_string()),
        "{overrides:?}"
    );
}

#[test]
fn solve_signals_nonconvergence_with_exit_code_two() {
    // A sharper congestion exponent needs several iterations; one is not
    // enough, and the run must say so in its exit code and report.
    let mut scenario: Value =
        serde_json::from_str(&read(&scenario_path("two_route_static.json"))).unwrap();
    for link in scenario["network"]["links"].as_array_mut().unwrap() {
        link["bpr_gamma"] = Value::from(5.0);
    }
    scenario["params"]["max_iters"] = Value::from(1);
    scenario["params"]["eps"] = Value::from(1e-10);

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("steep.json");
    std::fs::write(&input, serde_json::to_string(&scenario).unwrap()).unwrap();

    let result = run(&[
        "solve",
        input.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");

    let report: Value =
        serde_json::from_str(&read(&dir.path().join("out").join("report.json"))).unwrap();
    assert_eq!(report["converged"], Value::Bool(false));
}

#[test]
fn malformed_input_fails_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.json");
    std::fs::write(&input, r#"{"name": "x", "modle": "static"}"#).unwrap();

    let result = run(&["validate", input.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("modle"), "stderr should name the bad key: {stderr}");

    let missing = run(&["validate", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn validate_accepts_the_bundled_scenarios() {
    for name in ["two_route_static.json", "two_route_dynamic.json"] {
        let result = run(&["validate", scenario_path(name).to_str().unwrap()]);
        assert!(
            result.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&result.stderr)
        );
        let stdout = String::from_utf8_lossy(&result.stdout);
        assert!(stdout.contains("ok"), "{stdout}");
    }
}

#[test]
fn repeated_solves_are_identical_apart_from_timing() {
    // A dynamic point-queue run exercises every output file, including the
    // vehicle states.
    let mut outputs: Vec<PathBuf> = Vec::new();
    for run_dir in ["first", "second"] {
        let dir = std::env::temp_dir().join(format!("tapsolve-determinism-{run_dir}"));
        let _ = std::fs::remove_dir_all(&dir);
        let result = run(&[
            "solve",
            scenario_path("two_route_dynamic.json").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--model",
            "mn",
        ]);
        assert!(result.status.success(), "{result:?}");
        outputs.push(dir);
    }

    for name in ["assignment.csv", "path_costs.csv", "metrics.csv", "state.csv"] {
        let a = read(&outputs[0].join(name));
        let b = read(&outputs[1].join(name));
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let iter_a = without_timing_column(&read(&outputs[0].join("iterations.csv")));
    let iter_b = without_timing_column(&read(&outputs[1].join("iterations.csv")));
    assert_eq!(iter_a, iter_b, "iteration traces differ");

    let rep_a: Value = serde_json::from_str(&read(&outputs[0].join("report.json"))).unwrap();
    let rep_b: Value = serde_json::from_str(&read(&outputs[1].join("report.json"))).unwrap();
    assert_eq!(without_timings(rep_a), without_timings(rep_b));

    for dir in outputs {
        let _ = std::fs::remove_dir_all(dir);
    }
}

#[test]
fn bundled_files_match_the_library_builders() {
    let loaded =
        tapsolve_cli::file::load_path(&scenario_path("two_route_static.json")).unwrap();
    let built = two_route::static_scenario(0.15);
    assert_eq!(loaded.scenario.network.links, built.network.links);
    assert_eq!(loaded.scenario.network.paths, built.network.paths);
    assert_eq!(loaded.scenario.network.ods, built.network.ods);
    assert_eq!(loaded.scenario.grid, built.grid);
    assert_eq!(loaded.scenario.model, built.model);
    assert_eq!(loaded.scenario.solver, built.solver);

    let loaded =
        tapsolve_cli::file::load_path(&scenario_path("two_route_dynamic.json")).unwrap();
    let built = two_route::dynamic_scenario(ModelKind::Ctm, CostMode::Instantaneous, 1300.0);
    assert_eq!(loaded.scenario.network.links, built.network.links);
    assert_eq!(loaded.scenario.network.paths, built.network.paths);
    assert_eq!(loaded.scenario.network.ods, built.network.ods);
    assert_eq!(loaded.scenario.grid, built.grid);
}

#[test]
fn compare_ranks_members_against_the_reference() {
    // Reference: the congestion-aware dynamic scenario. Member: the same
    // network under point-queue dynamics, which must measure farther from
    // the reference's equilibrium than the reference itself.
    let dir = tempfile::tempdir().unwrap();
    let mn_path = dir.path().join("point_queue.json");
    let mut scenario: Value =
        serde_json::from_str(&read(&scenario_path("two_route_dynamic.json"))).unwrap();
    scenario["name"] = Value::from("point_queue");
    scenario["model"] = Value::from("mn");
    std::fs::write(&mn_path, serde_json::to_string(&scenario).unwrap()).unwrap();

    let out = dir.path().join("cmp");
    let result = run(&[
        "compare",
        "--reference",
        scenario_path("two_route_dynamic.json").to_str().unwrap(),
        mn_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    let summary = read(&out.join("compare_summary.csv"));
    let mut lines = summary.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,model,solver,converged,gap,d_flow_integral,d_state_integral")
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 2, "reference plus one member: {summary}");
    assert_eq!(rows[0][0], "two_route_dynamic");
    assert_eq!(rows[1][0], "point_queue");

    let d_flow_ref: f64 = rows[0][5].parse().unwrap();
    let d_flow_mn: f64 = rows[1][5].parse().unwrap();
    assert!(
        d_flow_mn > d_flow_ref,
        "point-queue distance {d_flow_mn} should exceed the reference's own {d_flow_ref}"
    );
    let d_state_ref: f64 = rows[0][6].parse().unwrap();
    let d_state_mn: f64 = rows[1][6].parse().unwrap();
    assert_eq!(d_state_ref, 0.0, "the reference is at zero distance from itself");
    assert!(d_state_mn > 0.0);

    assert!(out.join("metrics_two_route_dynamic.csv").exists());
    assert!(out.join("metrics_point_queue.csv").exists());
}

#[test]
fn compare_rejects_a_static_reference() {
    let dir = tempfile::tempdir().unwrap();
    let result = run(&[
        "compare",
        "--reference",
        scenario_path("two_route_static.json").to_str().unwrap(),
        scenario_path("two_route_static.json").to_str().unwrap(),
        "--out",
        dir.path().join("cmp").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("dynamic"),
        "error should explain the reference must be dynamic: {stderr}"
    );
}
