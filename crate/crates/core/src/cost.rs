//! Cost mappings from assignments to path travel times.
//!
//! Static networks price a path as the sum of flow-dependent link delays.
//! Dynamic networks first run a loading to obtain per-step link states, then
//! read travel times off the trajectory in one of two ways: *instantaneous*
//! costs sum the link times observed in the entry step, while *actual* costs
//! follow a vehicle's clock across links, sampling each link at the moment
//! the vehicle reaches it.

use crate::assignment::{DemandAssignment, PathCosts};
use crate::error::Error;
use crate::models::{run_loading, static_flows, StateTrajectory};
use crate::network::{build_incidence, Link, Network};
use crate::scenario::{CostMode, ModelKind};

/// Volume-delay curve: free-flow time inflated by a quartic of the
/// volume/capacity ratio.
pub fn bpr(flow_vph: f64, link: &Link) -> Result<f64, Error> {
    if flow_vph < 0.0 {
        return Err(Error::NegativeFlow {
            link: link.id,
            flow: flow_vph,
        });
    }
    let ratio = flow_vph / link.capacity_vph;
    Ok(link.free_flow_time_s() * (1.0 + link.bpr_gamma * ratio.powi(4)))
}

/// Path costs for a static assignment: link flows via the incidence map,
/// link delays via [`bpr`], summed along each path.
pub fn static_path_costs(h: &DemandAssignment, network: &Network) -> Result<PathCosts, Error> {
    let incidence = build_incidence(network)?;
    let flows = static_flows(h, &incidence)?;
    let mut costs = PathCosts::zeros(network.n_paths(), h.steps(), h.dt_s);
    let mut link_cost = vec![0.0; network.n_links()];
    for t in 0..h.steps() {
        for (l, link) in network.links.iter().enumerate() {
            link_cost[l] = bpr(flows[[l, t]], link)?;
        }
        for p in 0..network.n_paths() {
            costs.values[[p, t]] = network.path_links(p).iter().map(|&l| link_cost[l]).sum();
        }
    }
    Ok(costs)
}

/// Travel time across one link during one step: occupancy divided by the
/// outflow rate, floored at the free-flow time. An empty link, or one with
/// no outflow this step, is priced at free flow (vehicles that cannot move
/// accrue their delay in later steps, where occupancy is still counted).
pub fn link_travel_time(x_veh: f64, outflow_veh: f64, link: &Link, dt_s: f64) -> f64 {
    let t0 = link.free_flow_time_s();
    if x_veh <= 0.0 || outflow_veh <= 0.0 {
        return t0;
    }
    (dt_s * x_veh / outflow_veh).max(t0)
}

fn link_times(traj: &StateTrajectory, network: &Network) -> Vec<Vec<f64>> {
    let mut tau = vec![vec![0.0; traj.steps()]; traj.n_links()];
    for (l, link) in network.links.iter().enumerate() {
        for k in 0..traj.steps() {
            tau[l][k] = link_travel_time(
                traj.link_occupancy(l, k),
                traj.link_flow[[l, k]],
                link,
                traj.dt_s,
            );
        }
    }
    tau
}

/// Instantaneous path costs: each link priced at the entry step of the path.
pub fn instantaneous_path_costs(traj: &StateTrajectory, network: &Network) -> PathCosts {
    let tau = link_times(traj, network);
    let mut costs = PathCosts::zeros(traj.n_paths(), traj.steps(), traj.dt_s);
    for p in 0..traj.n_paths() {
        for k in 0..traj.steps() {
            costs.values[[p, k]] = network.path_links(p).iter().map(|&l| tau[l][k]).sum();
        }
    }
    costs
}

/// Sample a per-step series at an arbitrary time: linear between grid points,
/// frozen at the last sample beyond the horizon.
fn sample(series: &[f64], t_s: f64, dt_s: f64) -> f64 {
    let last = series.len() - 1;
    let u = (t_s / dt_s).max(0.0);
    let j = u.floor() as usize;
    if j >= last {
        return series[last];
    }
    let frac = u - j as f64;
    series[j] * (1.0 - frac) + series[j + 1] * frac
}

/// Actual (experienced) path costs: walk a clock along the path, pricing
/// each link at the predicted moment of arrival.
pub fn actual_path_costs(traj: &StateTrajectory, network: &Network) -> PathCosts {
    let tau = link_times(traj, network);
    let mut costs = PathCosts::zeros(traj.n_paths(), traj.steps(), traj.dt_s);
    for p in 0..traj.n_paths() {
        for k in 0..traj.steps() {
            let depart = k as f64 * traj.dt_s;
            let mut clock = depart;
            for &l in network.path_links(p) {
                clock += sample(&tau[l], clock, traj.dt_s);
            }
            costs.values[[p, k]] = clock - depart;
        }
    }
    costs
}

/// Free-flow path costs on the full time grid; the seed most solvers start
/// their first shortest-path assignment from.
pub fn free_flow_path_costs(network: &Network, steps: usize, dt_s: f64) -> PathCosts {
    let mut costs = PathCosts::zeros(network.n_paths(), steps, dt_s);
    for p in 0..network.n_paths() {
        let t0 = network.path_free_flow_time_s(p);
        for k in 0..steps {
            costs.values[[p, k]] = t0;
        }
    }
    costs
}

/// The cost operator: maps an assignment to path costs under the chosen
/// traffic model and costing rule. Pure — repeated evaluation at the same
/// point returns identical values.
pub fn evaluate_f(
    h: &DemandAssignment,
    network: &Network,
    model: ModelKind,
    cost_mode: CostMode,
) -> Result<PathCosts, Error> {
    match (model, cost_mode) {
        (ModelKind::Static, CostMode::Bpr) => static_path_costs(h, network),
        (ModelKind::Static, _) => Err(Error::IncompatibleConfig(format!(
            "static model requires bpr costs, got {cost_mode:?}"
        ))),
        (_, CostMode::Bpr) => Err(Error::IncompatibleConfig(format!(
            "{model:?} model cannot use bpr costs"
        ))),
        (ModelKind::Mn | ModelKind::Ctm, CostMode::Instantaneous) => {
            let traj = run_loading(h, network, model)?;
            Ok(instantaneous_path_costs(&traj, network))
        }
        (ModelKind::Mn | ModelKind::Ctm, CostMode::Actual) => {
            let traj = run_loading(h, network, model)?;
            Ok(actual_path_costs(&traj, network))
        }
    }
}
