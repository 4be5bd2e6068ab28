//! A solvable problem description: network + model + cost mode + solver
//! configuration + time grid, plus the bundled two-route example network.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::network::{DemandProfile, Link, Network, ODPair, Path};

/// Default jam density applied when a scenario does not specify one.
pub const DEFAULT_JAM_DENSITY_VPKM: f64 = 140.0;
/// Default BPR congestion coefficient.
pub const DEFAULT_BPR_GAMMA: f64 = 0.15;
/// Default dynamic-model timestep.
pub const DEFAULT_DT_S: f64 = 5.0;

/// Which traffic model maps assignments to flows/states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Time-separable link-performance model (BPR delays).
    Static,
    /// Point-queue dynamic model: links always accept inflow at capacity, so
    /// congestion never propagates backward and queues grow without bound.
    Mn,
    /// Cell-transmission model with one cell per link and a triangular
    /// flow-density relation; queues spill back through link supplies.
    Ctm,
}

impl ModelKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, ModelKind::Mn | ModelKind::Ctm)
    }
}

/// How path costs are read off the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// BPR link delays summed along each path (static model only).
    Bpr,
    /// Sum of same-instant link travel times (dynamic models).
    Instantaneous,
    /// Experienced travel time: a virtual vehicle walks the path, entering
    /// each link at the clock time it actually arrives (dynamic models).
    Actual,
}

/// Which algorithm drives the assignment toward equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Frank-Wolfe with exact line search; static model only.
    Fw,
    /// Method of successive averages.
    Msa,
    /// Extragradient projection method.
    Epm,
    /// MSA warm-up followed by the extragradient method.
    MsaThenEpm,
}

/// Numerical knobs shared by the solvers. Fields irrelevant to a given
/// algorithm are ignored by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Relative-gap convergence threshold.
    pub eps: f64,
    /// Iteration budget.
    pub max_iters: usize,
    /// Initial extragradient step length, in (veh/hr) of assignment shift per
    /// second of path-cost difference.
    pub tau0: f64,
    /// Multiplier applied to tau when the gap stops improving.
    pub sigma: f64,
    /// Relative gap-change threshold that triggers the tau shrink.
    pub mu: f64,
    /// MSA iterations run before handing over to the extragradient method.
    pub msa_warmup_iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            eps: 1e-4,
            max_iters: 1000,
            tau0: 1e-2,
            sigma: 0.5,
            mu: 0.1,
            msa_warmup_iters: 20,
        }
    }
}

/// Uniform departure-time grid: `steps()` intervals of `dt_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dt_s: f64,
    pub horizon_s: f64,
}

impl Grid {
    pub fn new(dt_s: f64, horizon_s: f64) -> Result<Self, Error> {
        let grid = Grid { dt_s, horizon_s };
        grid.steps()?;
        Ok(grid)
    }

    /// Number of whole timesteps in the horizon.
    pub fn steps(&self) -> Result<usize, Error> {
        if !(self.dt_s > 0.0) || !(self.horizon_s > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "dt {} s and horizon {} s must be positive",
                self.dt_s, self.horizon_s
            )));
        }
        let steps = (self.horizon_s / self.dt_s).round();
        if (self.horizon_s - steps * self.dt_s).abs() > 1e-9 * self.horizon_s.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {} s is not a whole number of {} s steps",
                self.horizon_s, self.dt_s
            )));
        }
        Ok(steps as usize)
    }
}

/// Everything needed to run one equilibrium computation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: Network,
    pub model: ModelKind,
    pub cost_mode: CostMode,
    pub solver: SolverKind,
    pub params: SolverParams,
    pub grid: Grid,
}

impl Scenario {
    /// Verify the scenario is internally consistent and solvable: valid
    /// network, matching demand grids, a legal model / cost-mode / solver
    /// combination, and (for the dynamic models) the discretization stability
    /// condition on every link.
    pub fn check(&self) -> Result<(), Error> {
        let errors: Vec<_> = self
            .network
            .validate()
            .into_iter()
            .filter(|d| d.severity == crate::network::Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(Error::InvalidNetwork(errors));
        }
        let steps = self.grid.steps()?;
        for od in &self.network.ods {
            if od.demand.dt_s != self.grid.dt_s
                || od.demand.horizon_s != self.grid.horizon_s
                || od.demand.rates_vph.len() != steps
            {
                return Err(Error::InvalidGrid(format!(
                    "od {} demand grid ({} s over {} s) does not match the scenario grid \
                     ({} s over {} s)",
                    od.id, od.demand.dt_s, od.demand.horizon_s, self.grid.dt_s, self.grid.horizon_s
                )));
            }
        }
        match (self.model, self.cost_mode) {
            (ModelKind::Static, CostMode::Bpr) => {}
            (ModelKind::Mn | ModelKind::Ctm, CostMode::Instantaneous | CostMode::Actual) => {}
            (m, c) => {
                return Err(Error::IncompatibleConfig(format!(
                    "cost mode {c:?} is not defined for model {m:?}"
                )))
            }
        }
        if self.solver == SolverKind::Fw && self.model != ModelKind::Static {
            return Err(Error::IncompatibleConfig(
                "Frank-Wolfe needs the separable static cost structure; \
                 use msa, epm, or msa_then_epm for dynamic models"
                    .into(),
            ));
        }
        if self.model.is_dynamic() {
            crate::models::check_cfl(&self.network, self.grid.dt_s)?;
        }
        if !(self.params.eps > 0.0)
            || self.params.max_iters == 0
            || !(self.params.tau0 > 0.0)
            || !(self.params.sigma > 0.0 && self.params.sigma < 1.0)
            || !(self.params.mu > 0.0)
        {
            return Err(Error::IncompatibleConfig(format!(
                "solver parameters out of range: {:?}",
                self.params
            )));
        }
        Ok(())
    }
}

/// The bundled example: a two-origin merge network with a route choice.
///
/// Six links, numbered 0-5. Origins at nodes 0 and 1 feed links 0 and 1,
/// which meet at node 2. From node 2 two parallel links run to node 3: link 2
/// (400 m) and link 3 (200 m). Link 4 joins node 3 to node 4 and link 5 —
/// the only link with reduced capacity — continues to the sink at node 5.
///
/// ```text
/// 0 --link 0--\            /--link 2 (400 m)--\
///              node 2 ----+                    +---- node 3 --link 4-- node 4 --link 5--> 5
/// 1 --link 1--/            \--link 3 (200 m)--/                        (1000 veh/hr)
/// ```
///
/// OD 0 (node 0 to node 5) chooses between path 1 = [0, 3, 4, 5] and
/// path 2 = [0, 2, 4, 5]; OD 1 (node 1 to node 5) is confined to
/// path 3 = [1, 3, 4, 5]. All links run at 70 km/h free flow with capacity
/// 2000 veh/hr except link 5 at 1000 veh/hr, so heavy demand queues upstream
/// of the sink and the route choice trades the longer link 2 against the
/// congestible link 3.
pub mod two_route {
    use super::*;

    /// The two-route network with constant demand rates.
    pub fn network(
        jam_density_vpkm: f64,
        bpr_gamma: f64,
        d0_vph: f64,
        d1_vph: f64,
        dt_s: f64,
        steps: usize,
    ) -> Network {
        network_with_demand(
            jam_density_vpkm,
            bpr_gamma,
            DemandProfile::constant(d0_vph, dt_s, steps),
            DemandProfile::constant(d1_vph, dt_s, steps),
        )
    }

    /// The two-route network with arbitrary demand profiles (one per OD).
    pub fn network_with_demand(
        jam_density_vpkm: f64,
        bpr_gamma: f64,
        d0: DemandProfile,
        d1: DemandProfile,
    ) -> Network {
        let link = |id, from_node, to_node, length_m, capacity_vph| Link {
            id,
            from_node,
            to_node,
            length_m,
            capacity_vph,
            free_flow_speed_kmh: 70.0,
            jam_density_vpkm,
            bpr_gamma,
        };
        let links = vec![
            link(0, 0, 2, 200.0, 2000.0),
            link(1, 1, 2, 200.0, 2000.0),
            link(2, 2, 3, 400.0, 2000.0),
            link(3, 2, 3, 200.0, 2000.0),
            link(4, 3, 4, 200.0, 2000.0),
            link(5, 4, 5, 200.0, 1000.0),
        ];
        let paths = vec![
            Path {
                id: 1,
                od: 0,
                links: vec![0, 3, 4, 5],
            },
            Path {
                id: 2,
                od: 0,
                links: vec![0, 2, 4, 5],
            },
            Path {
                id: 3,
                od: 1,
                links: vec![1, 3, 4, 5],
            },
        ];
        let ods = vec![
            ODPair {
                id: 0,
                origin_node: 0,
                destination_node: 5,
                paths: vec![1, 2],
                demand: d0,
            },
            ODPair {
                id: 1,
                origin_node: 1,
                destination_node: 5,
                paths: vec![3],
                demand: d1,
            },
        ];
        Network::new(links, paths, ods)
    }

    /// Demand profile that holds `rate_vph` until `until_s` and is zero after.
    pub fn demand_window(rate_vph: f64, until_s: f64, dt_s: f64, steps: usize) -> DemandProfile {
        let rates_vph = (0..steps)
            .map(|k| if (k as f64) * dt_s < until_s { rate_vph } else { 0.0 })
            .collect();
        DemandProfile {
            rates_vph,
            dt_s,
            horizon_s: dt_s * steps as f64,
        }
    }

    /// Static BPR scenario: constant demand (1300 and 300 veh/hr), one
    /// hour-long timestep, solved with Frank-Wolfe.
    pub fn static_scenario(gamma: f64) -> Scenario {
        Scenario {
            name: format!("two_route_static_gamma_{gamma}"),
            network: network(DEFAULT_JAM_DENSITY_VPKM, gamma, 1300.0, 300.0, 3600.0, 1),
            model: ModelKind::Static,
            cost_mode: CostMode::Bpr,
            solver: SolverKind::Fw,
            params: SolverParams::default(),
            grid: Grid {
                dt_s: 3600.0,
                horizon_s: 3600.0,
            },
        }
    }

    /// Dynamic scenario: demand of `d0_vph` and 300 veh/hr for the first
    /// 300 s of a 600 s horizon on a 5 s grid, solved with MSA-warm-started
    /// extragradient iterations.
    pub fn dynamic_scenario(model: ModelKind, cost_mode: CostMode, d0_vph: f64) -> Scenario {
        let steps = 120;
        let dt = DEFAULT_DT_S;
        Scenario {
            name: format!("two_route_{model:?}_{cost_mode:?}_{d0_vph}").to_lowercase(),
            network: network_with_demand(
                DEFAULT_JAM_DENSITY_VPKM,
                DEFAULT_BPR_GAMMA,
                demand_window(d0_vph, 300.0, dt, steps),
                demand_window(300.0, 300.0, dt, steps),
            ),
            model,
            cost_mode,
            solver: SolverKind::MsaThenEpm,
            params: SolverParams {
                eps: 1e-4,
                max_iters: 20_000,
                tau0: 10.0,
                sigma: 0.5,
                mu: 0.01,
                msa_warmup_iters: 20,
            },
            grid: Grid {
                dt_s: dt,
                horizon_s: dt * steps as f64,
            },
        }
    }
}
