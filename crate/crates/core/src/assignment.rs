//! Demand assignments, path costs, and the projection onto the feasible set.
//!
//! A demand assignment spreads each OD pair's demand rate over its paths,
//! per departure timestep. The feasible set is a product of scaled
//! simplices: within every (OD, timestep) block the entries are nonnegative
//! and sum to that OD's demand rate. Projection onto one block uses the
//! sort-and-threshold simplex algorithm, O(n log n) in the block size.

use ndarray::Array2;

use crate::error::Error;
use crate::network::Network;

/// Absolute tolerance, in veh/hr, on each block-sum constraint.
pub const FEASIBILITY_TOL_VPH: f64 = 1e-6;

/// Per-path, per-departure-timestep demand rates in veh/hr.
///
/// `values[[p, t]]` is the rate assigned to dense path index `p` for
/// departures in timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandAssignment {
    pub values: Array2<f64>,
    pub dt_s: f64,
}

impl DemandAssignment {
    pub fn zeros(n_paths: usize, steps: usize, dt_s: f64) -> Self {
        DemandAssignment {
            values: Array2::zeros((n_paths, steps)),
            dt_s,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn steps(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-path, per-departure-timestep travel costs in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    pub values: Array2<f64>,
    pub dt_s: f64,
}

impl PathCosts {
    pub fn zeros(n_paths: usize, steps: usize, dt_s: f64) -> Self {
        PathCosts {
            values: Array2::zeros((n_paths, steps)),
            dt_s,
        }
    }
}

/// Outcome of a feasibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Largest constraint violation found, in veh/hr: either a negative
    /// entry's magnitude or a block sum's deviation from its demand.
    pub max_violation_vph: f64,
}

/// Check nonnegativity and every (OD, timestep) block-sum constraint.
///
/// Negativity is judged exactly (the projection clips to exact zeros, and
/// convex averaging of nonnegative iterates stays nonnegative); block sums
/// are allowed [`FEASIBILITY_TOL_VPH`] of float slack.
pub fn is_feasible(h: &DemandAssignment, network: &Network) -> Result<Feasibility, Error> {
    check_shape(h.n_paths(), h.steps(), network)?;
    let mut max_violation: f64 = 0.0;
    let mut feasible = true;
    for &v in h.values.iter() {
        if v < 0.0 {
            feasible = false;
            max_violation = max_violation.max(-v);
        }
    }
    for (w, od) in network.ods.iter().enumerate() {
        for t in 0..h.steps() {
            let sum: f64 = network.od_paths(w).iter().map(|&p| h.values[[p, t]]).sum();
            let dev = (sum - od.demand.rates_vph[t]).abs();
            max_violation = max_violation.max(dev);
            if dev > FEASIBILITY_TOL_VPH {
                feasible = false;
            }
        }
    }
    Ok(Feasibility {
        feasible,
        max_violation_vph: max_violation,
    })
}

/// Euclidean projection of one block onto the scaled simplex
/// `{ y >= 0, sum(y) = target }`.
///
/// Sort-and-threshold: sort a copy descending, find the largest prefix whose
/// running mean keeps the shifted entries positive, then clip. Entries pushed
/// below zero come out as exact zeros.
pub fn project_block(x: &[f64], target: f64) -> Result<Vec<f64>, Error> {
    if !(target >= 0.0) {
        return Err(Error::NegativeDemand(target));
    }
    assert!(!x.is_empty(), "cannot project an empty block");
    if target == 0.0 {
        // The simplex degenerates to the origin.
        return Ok(vec![0.0; x.len()]);
    }
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("assignment values must not be NaN"));
    let mut csum = 0.0;
    let mut theta = 0.0;
    let mut found = false;
    for (j, &uj) in u.iter().enumerate() {
        csum += uj;
        let shift = (target - csum) / (j + 1) as f64;
        if uj + shift > 0.0 {
            theta = shift;
            found = true;
        }
    }
    debug_assert!(found, "a positive target always admits a support");
    Ok(x.iter().map(|&xi| (xi + theta).max(0.0)).collect())
}

/// Project an arbitrary assignment onto the feasible set, block by block.
pub fn project(h: &DemandAssignment, network: &Network) -> Result<DemandAssignment, Error> {
    check_shape(h.n_paths(), h.steps(), network)?;
    let mut out = h.clone();
    for (w, od) in network.ods.iter().enumerate() {
        let paths = network.od_paths(w);
        for t in 0..h.steps() {
            let block: Vec<f64> = paths.iter().map(|&p| h.values[[p, t]]).collect();
            let projected = project_block(&block, od.demand.rates_vph[t])?;
            for (&p, &v) in paths.iter().zip(&projected) {
                out.values[[p, t]] = v;
            }
        }
    }
    Ok(out)
}

fn check_shape(n_paths: usize, steps: usize, network: &Network) -> Result<(), Error> {
    if n_paths != network.n_paths() {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {} path rows, network has {} paths",
            n_paths,
            network.n_paths()
        )));
    }
    for od in &network.ods {
        if od.demand.rates_vph.len() != steps {
            return Err(Error::DimensionMismatch(format!(
                "assignment has {} timesteps, od {} demand has {}",
                steps,
                od.id,
                od.demand.rates_vph.len()
            )));
        }
    }
    Ok(())
}
