//! Distance-to-equilibrium measures.
//!
//! Two complementary views: a *flow-space* distance that prices an
//! assignment's excess cost over the cheapest available path (zero exactly
//! at equilibrium), and a *state-space* distance that compares loaded
//! trajectories link by link, which also registers differences between
//! traffic models that the flow view cannot see.

use crate::assignment::{DemandAssignment, PathCosts};
use crate::error::Error;
use crate::models::StateTrajectory;
use crate::network::Network;

/// Cheapest cost over an origin-destination pair's paths at one step.
pub fn min_path_cost(costs: &PathCosts, network: &Network, od: usize, t: usize) -> f64 {
    network
        .od_paths(od)
        .iter()
        .map(|&p| costs.values[[p, t]])
        .fold(f64::INFINITY, f64::min)
}

/// Flow-space distance per step: total excess cost
/// `sum_w sum_p h_p (c_p - pi_w)` with `pi_w` the cheapest cost for the
/// pair. Non-negative, and zero iff every used path is cheapest — the
/// complementarity form of the equilibrium condition.
pub fn wardrop_distance_flow(
    h: &DemandAssignment,
    costs: &PathCosts,
    network: &Network,
) -> Result<Vec<f64>, Error> {
    if h.values.dim() != costs.values.dim() {
        return Err(Error::DimensionMismatch(format!(
            "assignment is {:?}, costs are {:?}",
            h.values.dim(),
            costs.values.dim()
        )));
    }
    let steps = h.steps();
    let mut out = vec![0.0; steps];
    for t in 0..steps {
        let mut total = 0.0;
        for w in 0..network.n_ods() {
            let pi = min_path_cost(costs, network, w, t);
            for &p in network.od_paths(w) {
                total += h.values[[p, t]] * (costs.values[[p, t]] - pi);
            }
        }
        out[t] = total;
    }
    Ok(out)
}

/// State-space distance per step: summed per-link Euclidean norms of the
/// difference in per-path link occupancy, sampled at step starts. The two
/// trajectories must share shape and step length.
pub fn wardrop_distance_state(
    traj: &StateTrajectory,
    reference: &StateTrajectory,
) -> Result<Vec<f64>, Error> {
    if traj.x.dim() != reference.x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory state is {:?}, reference is {:?}",
            traj.x.dim(),
            reference.x.dim()
        )));
    }
    if (traj.dt_s - reference.dt_s).abs() > 1e-9 {
        return Err(Error::DimensionMismatch(format!(
            "trajectory step is {} s, reference step is {} s",
            traj.dt_s, reference.dt_s
        )));
    }
    let steps = traj.steps();
    let mut out = vec![0.0; steps];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut total = 0.0;
        for l in 0..traj.n_links() {
            let mut sq = 0.0;
            for p in 0..traj.n_paths() {
                let d = traj.x[[l, p, k]] - reference.x[[l, p, k]];
                sq += d * d;
            }
            total += sq.sqrt();
        }
        *slot = total;
    }
    Ok(out)
}
