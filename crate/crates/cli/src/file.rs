//! On-disk scenario format and its conversion into a solvable scenario.
//!
//! The format is strict: unknown keys are rejected so typos fail loudly
//! instead of silently falling back to defaults. Demand is written as
//! `[start_s, rate_vph]` breakpoints and expanded to a piecewise-constant
//! profile on the scenario grid. Per-link `jam_density_vpkm` and
//! `bpr_gamma` may be omitted; omitted jam densities draw a warning since
//! they change cell-transmission behavior.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tapsolve_core::scenario::{DEFAULT_BPR_GAMMA, DEFAULT_DT_S, DEFAULT_JAM_DENSITY_VPKM};
use tapsolve_core::{
    CostMode, DemandProfile, Grid, Link, ModelKind, Network, ODPair, Scenario, SolverKind,
    SolverParams,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileScenario {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub model: ModelKind,
    pub cost_mode: CostMode,
    pub solver: SolverKind,
    pub grid: FileGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<FileParams>,
    pub network: FileNetwork,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileGrid {
    pub dt_s: f64,
    pub horizon_s: f64,
}

/// Solver parameters; every field optional, falling back to the library
/// defaults.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msa_warmup_iters: Option<usize>,
}

impl FileParams {
    pub fn resolve(&self) -> SolverParams {
        let d = SolverParams::default();
        SolverParams {
            eps: self.eps.unwrap_or(d.eps),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tau0: self.tau0.unwrap_or(d.tau0),
            sigma: self.sigma.unwrap_or(d.sigma),
            mu: self.mu.unwrap_or(d.mu),
            msa_warmup_iters: self.msa_warmup_iters.unwrap_or(d.msa_warmup_iters),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileNetwork {
    pub links: Vec<FileLink>,
    pub paths: Vec<FilePath>,
    pub ods: Vec<FileOd>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileLink {
    pub id: u64,
    pub from_node: u64,
    pub to_node: u64,
    pub length_m: f64,
    pub capacity_vph: f64,
    pub free_flow_speed_kmh: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jam_density_vpkm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpr_gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilePath {
    pub id: u64,
    pub od: u64,
    pub links: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileOd {
    pub id: u64,
    pub origin_node: u64,
    pub destination_node: u64,
    pub paths: Vec<u64>,
    /// `[start_s, rate_vph]` breakpoints, strictly increasing in time.
    /// The rate holds from its start until the next breakpoint; time
    /// before the first breakpoint has rate zero.
    pub demand: Vec<(f64, f64)>,
}

/// Expand demand breakpoints onto a uniform grid. Each step takes the rate
/// in force at its start instant.
pub fn expand_demand(breakpoints: &[(f64, f64)], dt_s: f64, steps: usize) -> Result<Vec<f64>> {
    if breakpoints.is_empty() {
        bail!("demand needs at least one [start_s, rate_vph] breakpoint");
    }
    for pair in breakpoints.windows(2) {
        if pair[1].0 <= pair[0].0 {
            bail!(
                "demand breakpoints must be strictly increasing in time ({} then {})",
                pair[0].0,
                pair[1].0
            );
        }
    }
    if breakpoints[0].0 < 0.0 {
        bail!("demand breakpoint at negative time {}", breakpoints[0].0);
    }
    let mut rates = vec![0.0; steps];
    for (k, slot) in rates.iter_mut().enumerate() {
        let t = k as f64 * dt_s;
        *slot = breakpoints
            .iter()
            .take_while(|(start, _)| *start <= t + 1e-9)
            .last()
            .map(|&(_, rate)| rate)
            .unwrap_or(0.0);
    }
    Ok(rates)
}

/// A parsed scenario file: the solvable form, the effective file form
/// (defaults filled in), and any warnings raised along the way.
#[derive(Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    pub effective: FileScenario,
    pub warnings: Vec<String>,
}

pub fn load_str(text: &str, origin: &str) -> Result<Loaded> {
    let file: FileScenario = serde_json::from_str(text)
        .map_err(|e| anyhow!("{origin}: line {}, column {}: {e}", e.line(), e.column()))?;
    realize(file)
}

pub fn load_path(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    load_str(&text, &path.display().to_string())
}

/// Turn the file form into a checked scenario, filling defaults and
/// collecting warnings. Returns the effective file form alongside, with
/// every defaulted field made explicit, for configuration echoes.
pub fn realize(file: FileScenario) -> Result<Loaded> {
    let mut warnings = Vec::new();
    let grid = Grid::new(file.grid.dt_s, file.grid.horizon_s)
        .map_err(|e| anyhow!("/grid: {e}"))?;
    let steps = grid.steps().map_err(|e| anyhow!("/grid: {e}"))?;

    let mut effective = file.clone();
    for (i, l) in effective.network.links.iter_mut().enumerate() {
        if l.jam_density_vpkm.is_none() {
            warnings.push(format!(
                "/network/links/{i}: jam_density_vpkm missing, using {DEFAULT_JAM_DENSITY_VPKM}"
            ));
            l.jam_density_vpkm = Some(DEFAULT_JAM_DENSITY_VPKM);
        }
        if l.bpr_gamma.is_none() {
            l.bpr_gamma = Some(DEFAULT_BPR_GAMMA);
        }
    }
    if effective.params.is_none() {
        effective.params = Some(FileParams::default());
    }

    let links: Vec<Link> = effective
        .network
        .links
        .iter()
        .map(|l| Link {
            id: l.id,
            from_node: l.from_node,
            to_node: l.to_node,
            length_m: l.length_m,
            capacity_vph: l.capacity_vph,
            free_flow_speed_kmh: l.free_flow_speed_kmh,
            jam_density_vpkm: l.jam_density_vpkm.unwrap_or(DEFAULT_JAM_DENSITY_VPKM),
            bpr_gamma: l.bpr_gamma.unwrap_or(DEFAULT_BPR_GAMMA),
        })
        .collect();
    let paths: Vec<tapsolve_core::Path> = effective
        .network
        .paths
        .iter()
        .map(|p| tapsolve_core::Path {
            id: p.id,
            od: p.od,
            links: p.links.clone(),
        })
        .collect();
    let ods: Vec<ODPair> = effective
        .network
        .ods
        .iter()
        .enumerate()
        .map(|(i, od)| {
            let rates = expand_demand(&od.demand, grid.dt_s, steps)
                .map_err(|e| anyhow!("/network/ods/{i}/demand: {e}"))?;
            Ok(ODPair {
                id: od.id,
                origin_node: od.origin_node,
                destination_node: od.destination_node,
                paths: od.paths.clone(),
                demand: DemandProfile {
                    rates_vph: rates,
                    dt_s: grid.dt_s,
                    horizon_s: grid.horizon_s,
                },
            })
        })
        .collect::<Result<_>>()?;

    let network = Network::new(links, paths, ods);
    let diagnostics = network.validate();
    let mut errors = Vec::new();
    for d in &diagnostics {
        match d.severity {
            tapsolve_core::Severity::Error => errors.push(format!("/network: {d}")),
            tapsolve_core::Severity::Warning => warnings.push(format!("/network: {d}")),
        }
    }
    if !errors.is_empty() {
        bail!("{}", errors.join("\n"));
    }

    let scenario = Scenario {
        name: effective.name.clone(),
        network,
        model: effective.model,
        cost_mode: effective.cost_mode,
        solver: effective.solver,
        params: effective.params.as_ref().map(|p| p.resolve()).unwrap_or_default(),
        grid,
    };
    scenario.check().map_err(|e| anyhow!("{e}"))?;
    Ok(Loaded {
        scenario,
        effective,
        warnings,
    })
}

/// Default grid step for newly authored files, re-exported for help text.
pub const FILE_DEFAULT_DT_S: f64 = DEFAULT_DT_S;

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "name": "one_link",
            "model": "static",
            "cost_mode": "bpr",
            "solver": "fw",
            "grid": {"dt_s": 3600.0, "horizon_s": 3600.0},
            "network": {
                "links": [{
                    "id": 0, "from_node": 0, "to_node": 1,
                    "length_m": 1000.0, "capacity_vph": 2000.0,
                    "free_flow_speed_kmh": 50.0
                }],
                "paths": [{"id": 1, "od": 0, "links": [0]}],
                "ods": [{
                    "id": 0, "origin_node": 0, "destination_node": 1,
                    "paths": [1], "demand": [[0.0, 700.0]]
                }]
            }
        })
    }

    #[test]
    fn minimal_file_loads_with_jam_warning() {
        let loaded = load_str(&minimal().to_string(), "inline").unwrap();
        assert_eq!(loaded.scenario.name, "one_link");
        assert_eq!(loaded.scenario.network.links[0].jam_density_vpkm, 140.0);
        assert_eq!(loaded.scenario.network.links[0].bpr_gamma, 0.15);
        assert!(loaded
            .warnings
            .iter()
            .any(|w| w.contains("/network/links/0") && w.contains("jam_density_vpkm")));
        // The effective echo carries the filled-in default.
        assert_eq!(
            loaded.effective.network.links[0].jam_density_vpkm,
            Some(140.0)
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal();
        v["network"]["links"][0]["capacity"] = serde_json::json!(1800.0);
        let err = load_str(&v.to_string(), "inline").unwrap_err().to_string();
        assert!(err.contains("unknown field"), "{err}");
        assert!(err.contains("capacity"), "{err}");
    }

    #[test]
    fn breakpoints_expand_piecewise_constant() {
        let rates =
            expand_demand(&[(0.0, 1300.0), (300.0, 0.0)], 5.0, 120).unwrap();
        assert_eq!(rates.len(), 120);
        assert!(rates[..60].iter().all(|&r| r == 1300.0));
        assert!(rates[60..].iter().all(|&r| r == 0.0));
        // Leading gap before the first breakpoint is zero demand.
        let delayed = expand_demand(&[(10.0, 500.0)], 5.0, 4).unwrap();
        assert_eq!(delayed, vec![0.0, 0.0, 500.0, 500.0]);
    }

    #[test]
    fn misordered_breakpoints_are_rejected() {
        let err = expand_demand(&[(10.0, 1.0), (10.0, 2.0)], 5.0, 4)
            .unwrap_err()
            .to_string();
        assert!(err.contains("strictly increasing"), "{err}");
    }

    #[test]
    fn semantic_errors_carry_pointers() {
        let mut v = minimal();
        v["network"]["paths"][0]["links"] = serde_json::json!([99]);
        let err = load_str(&v.to_string(), "inline").unwrap_err().to_string();
        assert!(err.contains("/network"), "{err}");
        assert!(err.contains("99"), "{err}");
    }

    #[test]
    fn bad_grid_is_rejected_with_pointer() {
        let mut v = minimal();
        v["grid"]["dt_s"] = serde_json::json!(7.0);
        v["grid"]["horizon_s"] = serde_json::json!(600.0);
        let err = load_str(&v.to_string(), "inline").unwrap_err().to_string();
        assert!(err.starts_with("/grid"), "{err}");
    }
}
