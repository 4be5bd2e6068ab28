//! Result files. Everything is written atomically (temp file in the target
//! directory, then rename) so a crashed run never leaves half a file, and
//! floats are formatted with Rust's shortest-roundtrip `Display` so reruns
//! of the same solve produce byte-identical files (timing columns aside).

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use tapsolve_core::{
    build_incidence, DemandAssignment, IterationRecord, Network, PathCosts, StateTrajectory,
    Termination,
};

use crate::file::FileScenario;

pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temp file in {}", dir.display()))?;
    std::fs::write(tmp.path(), content)
        .with_context(|| format!("cannot write {}", tmp.path().display()))?;
    tmp.persist(path)
        .with_context(|| format!("cannot move result into {}", path.display()))?;
    Ok(())
}

pub fn assignment_csv(h: &DemandAssignment, network: &Network) -> String {
    let mut out = String::from("path_id,timestep,value_vph\n");
    for p in 0..h.n_paths() {
        for t in 0..h.steps() {
            out.push_str(&format!(
                "{},{},{}\n",
                network.paths[p].id,
                t,
                h.values[[p, t]]
            ));
        }
    }
    out
}

pub fn path_costs_csv(costs: &PathCosts, network: &Network) -> String {
    let mut out = String::from("path_id,timestep,cost_s\n");
    for p in 0..costs.values.nrows() {
        for t in 0..costs.values.ncols() {
            out.push_str(&format!(
                "{},{},{}\n",
                network.paths[p].id,
                t,
                costs.values[[p, t]]
            ));
        }
    }
    out
}

/// Per-step link state, one row per (link, path) pair the path actually
/// traverses: occupancy at the step start, then the step's inflow and
/// outflow in vehicles.
pub fn state_csv(traj: &StateTrajectory, network: &Network) -> Result<String> {
    let incidence = build_incidence(network)?;
    let mut out = String::from("link_id,path_id,timestep,vehicles,inflow_veh,outflow_veh\n");
    for l in 0..traj.n_links() {
        for p in 0..traj.n_paths() {
            if !incidence.is_on(l, p) {
                continue;
            }
            for k in 0..traj.steps() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    network.links[l].id,
                    network.paths[p].id,
                    k,
                    traj.x[[l, p, k]],
                    traj.flows_in[[l, p, k]],
                    traj.flows_out[[l, p, k]]
                ));
            }
        }
    }
    Ok(out)
}

pub fn iterations_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("k,gap,step,wall_ms\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.k, r.gap, r.step, r.wall_ms));
    }
    out
}

pub fn metrics_csv(d_flow: &[f64], d_state: &[f64]) -> String {
    let mut out = String::from("timestep,d_wardrop_flow,d_wardrop_state\n");
    for (t, (df, ds)) in d_flow.iter().zip(d_state).enumerate() {
        out.push_str(&format!("{t},{df},{ds}\n"));
    }
    out
}

/// Machine-readable run summary; `config` echoes the complete effective
/// scenario (defaults filled in, overrides applied).
#[derive(Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub converged: bool,
    pub termination: Termination,
    pub gap: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub overrides: Vec<String>,
    pub warnings: Vec<String>,
    pub config: FileScenario,
}

pub fn report_json(report: &Report) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}
