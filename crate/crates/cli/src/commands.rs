//! The operations behind the binary's subcommands, callable from tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use tapsolve_core::cost::{actual_path_costs, instantaneous_path_costs};
use tapsolve_core::metrics::{wardrop_distance_flow, wardrop_distance_state};
use tapsolve_core::{
    run_loading, solve_scenario, CostMode, ModelKind, Scenario, SolverKind, StateTrajectory,
};

use crate::file::{load_path, realize, FileParams, FileScenario, Loaded};
use crate::output;

/// Exit code for a run that finished without converging.
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub eps: Option<f64>,
    pub max_iters: Option<usize>,
    pub tau0: Option<f64>,
    pub model: Option<ModelKind>,
    pub cost_mode: Option<CostMode>,
    pub solver: Option<SolverKind>,
}

impl Overrides {
    /// Apply to a parsed file, returning human-readable `key=value` strings
    /// for the report.
    pub fn apply(&self, file: &mut FileScenario) -> Vec<String> {
        let mut applied = Vec::new();
        let params = file.params.get_or_insert_with(FileParams::default);
        if let Some(eps) = self.eps {
            params.eps = Some(eps);
            applied.push(format!("params.eps={eps}"));
        }
        if let Some(n) = self.max_iters {
            params.max_iters = Some(n);
            applied.push(format!("params.max_iters={n}"));
        }
        if let Some(tau0) = self.tau0 {
            params.tau0 = Some(tau0);
            applied.push(format!("params.tau0={tau0}"));
        }
        if let Some(model) = self.model {
            file.model = model;
            applied.push(format!("model={}", keyword(&model)));
        }
        if let Some(cost_mode) = self.cost_mode {
            file.cost_mode = cost_mode;
            applied.push(format!("cost_mode={}", keyword(&cost_mode)));
        }
        if let Some(solver) = self.solver {
            file.solver = solver;
            applied.push(format!("solver={}", keyword(&solver)));
        }
        applied
    }
}

/// The serde snake_case keyword for one of the scenario enums.
fn keyword<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| "?".into())
}

pub fn parse_enum<T: serde::de::DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| anyhow!("unknown {kind} '{text}'"))
}

fn load_with_overrides(path: &Path, overrides: &Overrides) -> Result<(Loaded, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut file: FileScenario = serde_json::from_str(&text).map_err(|e| {
        anyhow!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        )
    })?;
    let applied = overrides.apply(&mut file);
    let loaded = realize(file).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((loaded, applied))
}

fn dynamic_outputs(
    scenario: &Scenario,
    h: &tapsolve_core::DemandAssignment,
) -> Result<StateTrajectory> {
    run_loading(h, &scenario.network, scenario.model).map_err(|e| anyhow!("{e}"))
}

/// Solve a scenario file and write the result set into `out_dir`.
/// Returns the process exit code.
pub fn solve(path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<i32> {
    let (loaded, applied) = load_with_overrides(path, overrides)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let scenario = &loaded.scenario;
    let started = Instant::now();
    let report = solve_scenario(scenario).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let h = &report.final_assignment;
    let costs = &report.final_costs;
    let d_flow = wardrop_distance_flow(h, costs, &scenario.network)?;
    // A single run has no second trajectory to compare against; the state
    // distance column is identically zero and only `compare` fills it.
    let d_state = vec![0.0; d_flow.len()];

    output::write_atomic(
        &out_dir.join("assignment.csv"),
        &output::assignment_csv(h, &scenario.network),
    )?;
    output::write_atomic(
        &out_dir.join("path_costs.csv"),
        &output::path_costs_csv(costs, &scenario.network),
    )?;
    output::write_atomic(
        &out_dir.join("iterations.csv"),
        &output::iterations_csv(&report.iterations),
    )?;
    output::write_atomic(
        &out_dir.join("metrics.csv"),
        &output::metrics_csv(&d_flow, &d_state),
    )?;
    if scenario.model != ModelKind::Static {
        let traj = dynamic_outputs(scenario, h)?;
        output::write_atomic(
            &out_dir.join("state.csv"),
            &output::state_csv(&traj, &scenario.network)?,
        )?;
    }
    let summary = output::Report {
        scenario: scenario.name.clone(),
        converged: report.converged,
        termination: report.termination,
        gap: report.final_gap(),
        iterations: report.iterations.len(),
        wall_ms,
        overrides: applied,
        warnings: loaded.warnings.clone(),
        config: loaded.effective.clone(),
    };
    output::write_atomic(
        &out_dir.join("report.json"),
        &output::report_json(&summary)?,
    )?;

    println!(
        "{}: {} after {} iterations, gap {:.3e} ({} ms)",
        scenario.name,
        if report.converged {
            "converged"
        } else {
            "stopped"
        },
        report.iterations.len(),
        report.final_gap(),
        wall_ms.round()
    );
    Ok(if report.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// Check a scenario file and report diagnostics without solving.
pub fn validate(path: &Path) -> Result<i32> {
    let loaded = load_path(path)?;
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    println!(
        "{}: ok ({} links, {} paths, {} od pairs, {} steps)",
        loaded.scenario.name,
        loaded.scenario.network.n_links(),
        loaded.scenario.network.n_paths(),
        loaded.scenario.network.n_ods(),
        loaded.scenario.grid.steps().map_err(|e| anyhow!("{e}"))?,
    );
    Ok(0)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn costs_under(scenario: &Scenario, traj: &StateTrajectory) -> Result<tapsolve_core::PathCosts> {
    match scenario.cost_mode {
        CostMode::Instantaneous => Ok(instantaneous_path_costs(traj, &scenario.network)),
        CostMode::Actual => Ok(actual_path_costs(traj, &scenario.network)),
        CostMode::Bpr => bail!("reference cost mode must be trajectory-based"),
    }
}

/// Solve several scenarios over the same network and grid, then measure
/// each solution inside the reference scenario's traffic model: load the
/// member's assignment under the reference model and price it with the
/// reference cost mode. Writes one metrics file per scenario plus a
/// summary table.
pub fn compare(reference: &Path, members: &[PathBuf], out_dir: &Path) -> Result<i32> {
    let ref_loaded = load_path(reference)?;
    let ref_scenario = &ref_loaded.scenario;
    if ref_scenario.model == ModelKind::Static {
        bail!(
            "{}: the comparison reference must use a dynamic model",
            reference.display()
        );
    }
    let ref_net_value = serde_json::to_value(&ref_loaded.effective.network)?;
    let ref_report = solve_scenario(ref_scenario).map_err(|e| anyhow!("{e}"))?;
    let ref_traj = run_loading(
        &ref_report.final_assignment,
        &ref_scenario.network,
        ref_scenario.model,
    )?;

    let mut rows = Vec::new();
    let mut entries: Vec<(&Path, bool)> = vec![(reference, true)];
    entries.extend(members.iter().map(|m| (m.as_path(), false)));
    for (path, is_reference) in entries {
        let loaded = if is_reference {
            None
        } else {
            Some(load_path(path)?)
        };
        let (scenario, effective) = match &loaded {
            Some(l) => (&l.scenario, &l.effective),
            None => (ref_scenario, &ref_loaded.effective),
        };
        if serde_json::to_value(&effective.network)? != ref_net_value {
            bail!(
                "{}: network differs from the reference scenario",
                path.display()
            );
        }
        if scenario.grid != ref_scenario.grid {
            bail!(
                "{}: time grid differs from the reference scenario",
                path.display()
            );
        }
        let report = if is_reference {
            ref_report.clone()
        } else {
            solve_scenario(scenario).map_err(|e| anyhow!("{}: {e}", path.display()))?
        };
        let h = &report.final_assignment;
        let traj = run_loading(h, &ref_scenario.network, ref_scenario.model)?;
        let costs = costs_under(ref_scenario, &traj)?;
        let d_flow = wardrop_distance_flow(h, &costs, &ref_scenario.network)?;
        let d_state = wardrop_distance_state(&traj, &ref_traj)?;
        let stem = file_stem(path);
        output::write_atomic(
            &out_dir.join(format!("metrics_{stem}.csv")),
            &output::metrics_csv(&d_flow, &d_state),
        )?;
        let dt = ref_scenario.grid.dt_s;
        let flow_integral: f64 = d_flow.iter().map(|v| v * dt).sum();
        let state_integral: f64 = d_state.iter().map(|v| v * dt).sum();
        rows.push(format!(
            "{stem},{},{},{},{},{},{}",
            keyword(&scenario.model),
            keyword(&scenario.solver),
            report.converged,
            report.final_gap(),
            flow_integral,
            state_integral
        ));
    }
    let mut table =
        String::from("scenario,model,solver,converged,gap,d_flow_integral,d_state_integral\n");
    for row in &rows {
        table.push_str(row);
        table.push('\n');
    }
    output::write_atomic(&out_dir.join("compare_summary.csv"), &table)?;
    println!("compared {} scenarios against {}", rows.len(), file_stem(reference));
    Ok(0)
}
