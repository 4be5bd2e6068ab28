//! Equilibrium solvers over the set of demand-feasible assignments.
//!
//! All methods share one outer loop: evaluate the cost operator, measure the
//! relative equilibrium gap against a best-response assignment, then take a
//! method-specific step. They differ only in the step:
//!
//! * Frank-Wolfe moves along the chord toward the best response with a
//!   bisection line search (static costs only, where the line search has a
//!   potential to descend).
//! * MSA averages the best response in with weight `1/k`.
//! * The extragradient method takes two projected steps per iteration — a
//!   probe point first, then the real update using costs at the probe —
//!   shrinking its step length whenever the gap fails to improve.

use std::time::Instant;

use serde::Serialize;

use crate::assignment::{project, DemandAssignment, PathCosts};
use crate::cost::{evaluate_f, free_flow_path_costs, static_path_costs};
use crate::error::Error;
use crate::network::Network;
use crate::scenario::{CostMode, ModelKind, Scenario, SolverKind, SolverParams};

/// Relative tolerance for treating two path costs as tied during a
/// best-response split.
const TIE_TOL: f64 = 1e-9;
/// Gap variation below this, sustained over [`STALL_WINDOW`] iterations,
/// counts as a stall.
const STALL_TOL: f64 = 1e-12;
const STALL_WINDOW: usize = 50;
const LINE_SEARCH_ITERS: usize = 40;

/// Why a solve loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative gap reached the requested tolerance.
    GapMet,
    /// Iteration budget exhausted.
    MaxIters,
    /// Gap stopped changing long before the tolerance was reached.
    Stalled,
}

/// One outer iteration: the gap measured at the current iterate, the step
/// size used to leave it (0 when the loop stopped here), and wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub gap: f64,
    pub step: f64,
    pub wall_ms: f64,
}

/// Result of a solve: the iterate the loop stopped at, costs evaluated at
/// that iterate, and the per-iteration trace.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: Vec<IterationRecord>,
    pub final_assignment: DemandAssignment,
    pub final_costs: PathCosts,
    pub converged: bool,
    pub termination: Termination,
}

impl SolverReport {
    pub fn final_gap(&self) -> f64 {
        self.iterations.last().map(|r| r.gap).unwrap_or(f64::NAN)
    }
}

/// A solvable instance: the network plus the model/cost pairing and grid.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub network: &'a Network,
    pub model: ModelKind,
    pub cost_mode: CostMode,
    pub steps: usize,
    pub dt_s: f64,
}

impl<'a> Problem<'a> {
    pub fn from_scenario(scenario: &'a Scenario) -> Result<Self, Error> {
        scenario.check()?;
        Ok(Self {
            network: &scenario.network,
            model: scenario.model,
            cost_mode: scenario.cost_mode,
            steps: scenario.grid.steps()?,
            dt_s: scenario.grid.dt_s,
        })
    }

    pub fn evaluate(&self, h: &DemandAssignment) -> Result<PathCosts, Error> {
        evaluate_f(h, self.network, self.model, self.cost_mode)
    }

    /// Default starting point: best response to free-flow costs.
    pub fn default_init(&self) -> Result<DemandAssignment, Error> {
        let c0 = free_flow_path_costs(self.network, self.steps, self.dt_s);
        all_or_nothing(&c0, self.network)
    }
}

/// Best-response assignment: per origin-destination pair and step, the full
/// demand rate goes to the cheapest path, split evenly over ties.
pub fn all_or_nothing(costs: &PathCosts, network: &Network) -> Result<DemandAssignment, Error> {
    let steps = costs.values.ncols();
    if costs.values.nrows() != network.n_paths() {
        return Err(Error::DimensionMismatch(format!(
            "costs cover {} paths, network has {}",
            costs.values.nrows(),
            network.n_paths()
        )));
    }
    let mut y = DemandAssignment::zeros(network.n_paths(), steps, costs.dt_s);
    for w in 0..network.n_ods() {
        let paths = network.od_paths(w);
        let demand = &network.ods[w].demand;
        if demand.rates_vph.len() != steps {
            return Err(Error::DimensionMismatch(format!(
                "od {} has {} demand samples, costs have {} steps",
                network.ods[w].id,
                demand.rates_vph.len(),
                steps
            )));
        }
        for t in 0..steps {
            let cheapest = paths
                .iter()
                .map(|&p| costs.values[[p, t]])
                .fold(f64::INFINITY, f64::min);
            let threshold = cheapest + TIE_TOL * cheapest.abs().max(1.0);
            let winners: Vec<usize> = paths
                .iter()
                .copied()
                .filter(|&p| costs.values[[p, t]] <= threshold)
                .collect();
            let share = demand.rates_vph[t] / winners.len() as f64;
            for p in winners {
                y.values[[p, t]] = share;
            }
        }
    }
    Ok(y)
}

/// Relative equilibrium gap `|<c, y - h>| / <c, y>` with `y` the best
/// response to `c`. Both inner products carry the same uniform step weight,
/// so it cancels. A zero denominator (no demand, or all-zero costs) makes
/// the gap 0 by convention.
pub fn relative_gap(
    costs: &PathCosts,
    h: &DemandAssignment,
    y: &DemandAssignment,
) -> Result<f64, Error> {
    if costs.values.dim() != h.values.dim() || h.values.dim() != y.values.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gap inputs disagree: costs {:?}, h {:?}, y {:?}",
            costs.values.dim(),
            h.values.dim(),
            y.values.dim()
        )));
    }
    let num = (&costs.values * &(&y.values - &h.values)).sum();
    let den = (&costs.values * &y.values).sum();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num.abs() / den)
}

/// Sliding window over recent gaps; reports a stall when the whole window
/// spans less than [`STALL_TOL`].
struct StallDetector {
    window: Vec<f64>,
}

impl StallDetector {
    fn new() -> Self {
        Self { window: Vec::new() }
    }

    fn push(&mut self, gap: f64) -> bool {
        self.window.push(gap);
        if self.window.len() > STALL_WINDOW {
            self.window.remove(0);
        }
        if self.window.len() < STALL_WINDOW {
            return false;
        }
        let lo = self.window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo <= STALL_TOL
    }
}

fn prepare_init(
    problem: &Problem,
    init: Option<&DemandAssignment>,
) -> Result<DemandAssignment, Error> {
    match init {
        Some(h0) => {
            if h0.values.dim() != (problem.network.n_paths(), problem.steps) {
                return Err(Error::DimensionMismatch(format!(
                    "initial assignment is {:?}, problem needs ({}, {})",
                    h0.values.dim(),
                    problem.network.n_paths(),
                    problem.steps
                )));
            }
            project(h0, problem.network)
        }
        None => problem.default_init(),
    }
}

enum Step {
    /// Loop stops at the current iterate.
    Stop(Termination),
    /// Loop continues; the f64 is the step-size value to record.
    Continue(f64),
}

/// Shared outer loop. `update` mutates `h` into the next iterate and
/// returns the step size it used; it sees the iteration number, current
/// costs, best response, and the gap just measured.
fn drive<F>(
    problem: &Problem,
    params: &SolverParams,
    init: Option<&DemandAssignment>,
    mut update: F,
) -> Result<SolverReport, Error>
where
    F: FnMut(
        usize,
        &mut DemandAssignment,
        &PathCosts,
        &DemandAssignment,
        f64,
    ) -> Result<f64, Error>,
{
    let mut h = prepare_init(problem, init)?;
    let mut iterations = Vec::new();
    let mut stall = StallDetector::new();
    for k in 1..=params.max_iters {
        let tick = Instant::now();
        let costs = problem.evaluate(&h)?;
        let y = all_or_nothing(&costs, problem.network)?;
        let gap = relative_gap(&costs, &h, &y)?;
        let verdict = if gap <= params.eps {
            Step::Stop(Termination::GapMet)
        } else if stall.push(gap) {
            Step::Stop(Termination::Stalled)
        } else if k == params.max_iters {
            Step::Stop(Termination::MaxIters)
        } else {
            Step::Continue(update(k, &mut h, &costs, &y, gap)?)
        };
        match verdict {
            Step::Stop(termination) => {
                iterations.push(IterationRecord {
                    k,
                    gap,
                    step: 0.0,
                    wall_ms: tick.elapsed().as_secs_f64() * 1e3,
                });
                return Ok(SolverReport {
                    iterations,
                    final_assignment: h,
                    final_costs: costs,
                    converged: termination == Termination::GapMet,
                    termination,
                });
            }
            Step::Continue(step) => {
                iterations.push(IterationRecord {
                    k,
                    gap,
                    step,
                    wall_ms: tick.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
    }
    unreachable!("loop always returns at k == max_iters");
}

/// Frank-Wolfe with bisection line search. Restricted to the static model,
/// where path costs are gradients of a separable potential and the line
/// search direction is a descent direction.
pub fn fw_solve(
    problem: &Problem,
    params: &SolverParams,
    init: Option<&DemandAssignment>,
) -> Result<SolverReport, Error> {
    if problem.model != ModelKind::Static {
        return Err(Error::IncompatibleConfig(format!(
            "frank-wolfe requires the static model, got {:?}",
            problem.model
        )));
    }
    let network = problem.network;
    drive(problem, params, init, |_k, h, _costs, y, _gap| {
        let d = &y.values - &h.values;
        // Directional derivative of the underlying potential at h + a*d is
        // <c(h + a*d), d>; bisect its sign change over [0, 1].
        let slope = |a: f64| -> Result<f64, Error> {
            let probe = DemandAssignment {
                values: &h.values + &(&d * a),
                dt_s: h.dt_s,
            };
            let c = static_path_costs(&probe, network)?;
            Ok((&c.values * &d).sum())
        };
        let alpha = if slope(1.0)? <= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..LINE_SEARCH_ITERS {
                let mid = 0.5 * (lo + hi);
                if slope(mid)? <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        h.values = &h.values + &(&d * alpha);
        Ok(alpha)
    })
}

/// Method of successive averages: fixed `1/k` averaging toward the best
/// response. Works with any model/cost pairing.
pub fn msa_solve(
    problem: &Problem,
    params: &SolverParams,
    init: Option<&DemandAssignment>,
) -> Result<SolverReport, Error> {
    drive(problem, params, init, |k, h, _costs, y, _gap| {
        let a = 1.0 / k as f64;
        h.values = &(&h.values * (1.0 - a)) + &(&y.values * a);
        Ok(a)
    })
}

/// Extragradient projection method: probe step, then an update using costs
/// evaluated at the probe. The step length starts at `tau0` and contracts
/// by `sigma` whenever the gap fails to improve by more than the relative
/// threshold `mu`.
pub fn epm_solve(
    problem: &Problem,
    params: &SolverParams,
    init: Option<&DemandAssignment>,
) -> Result<SolverReport, Error> {
    let network = problem.network;
    let mut tau = params.tau0;
    let mut prev_gap: Option<f64> = None;
    drive(problem, params, init, |_k, h, costs, _y, gap| {
        if let Some(prev) = prev_gap {
            if prev > 0.0 && gap >= prev && (gap - prev).abs() / prev > params.mu {
                tau *= params.sigma;
            }
        }
        prev_gap = Some(gap);
        let probe = project(
            &DemandAssignment {
                values: &h.values - &(&costs.values * tau),
                dt_s: h.dt_s,
            },
            network,
        )?;
        let probe_costs = evaluate_f(&probe, network, problem.model, problem.cost_mode)?;
        let next = project(
            &DemandAssignment {
                values: &h.values - &(&probe_costs.values * tau),
                dt_s: h.dt_s,
            },
            network,
        )?;
        h.values = next.values;
        Ok(tau)
    })
}

/// Solve a scenario with its configured method. The combined
/// `msa_then_epm` mode runs an averaging warmup for
/// `params.msa_warmup_iters` iterations, then hands the iterate to the
/// extragradient method for the remaining budget; iteration numbering in
/// the merged trace is continuous.
pub fn solve_scenario(scenario: &Scenario) -> Result<SolverReport, Error> {
    let problem = Problem::from_scenario(scenario)?;
    let params = scenario.params;
    match scenario.solver {
        SolverKind::Fw => fw_solve(&problem, &params, None),
        SolverKind::Msa => msa_solve(&problem, &params, None),
        SolverKind::Epm => epm_solve(&problem, &params, None),
        SolverKind::MsaThenEpm => {
            let warmup = params.msa_warmup_iters.min(params.max_iters);
            let mut msa_params = params;
            msa_params.max_iters = warmup;
            let head = msa_solve(&problem, &msa_params, None)?;
            if head.termination != Termination::MaxIters || warmup == params.max_iters {
                return Ok(head);
            }
            let mut epm_params = params;
            epm_params.max_iters = params.max_iters - warmup;
            let tail = epm_solve(&problem, &epm_params, Some(&head.final_assignment))?;
            let mut iterations = head.iterations;
            iterations.extend(tail.iterations.iter().map(|r| IterationRecord {
                k: r.k + warmup,
                ..*r
            }));
            Ok(SolverReport {
                iterations,
                final_assignment: tail.final_assignment,
                final_costs: tail.final_costs,
                converged: tail.converged,
                termination: tail.termination,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::is_feasible;
    use crate::scenario::{two_route, Grid};
    use proptest::prelude::*;

    fn static_problem(network: &Network) -> Problem<'_> {
        Problem {
            network,
            model: ModelKind::Static,
            cost_mode: CostMode::Bpr,
            steps: 1,
            dt_s: 3600.0,
        }
    }

    #[test]
    fn relative_gap_hand_example() {
        let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        let mut h = DemandAssignment::zeros(3, 1, 3600.0);
        h.values[[1, 0]] = 1300.0;
        h.values[[2, 0]] = 300.0;
        let mut c = PathCosts::zeros(3, 1, 3600.0);
        c.values[[0, 0]] = 40.0;
        c.values[[1, 0]] = 50.0;
        c.values[[2, 0]] = 0.0;
        let y = all_or_nothing(&c, &net).unwrap();
        assert_eq!(y.values[[0, 0]], 1300.0);
        assert_eq!(y.values[[1, 0]], 0.0);
        assert_eq!(y.values[[2, 0]], 300.0);
        // Moving 1300 veh/hr from a 50 s path to a 40 s one against a
        // best-response value of 52000: gap 13000/52000.
        let gap = relative_gap(&c, &h, &y).unwrap();
        assert!((gap - 0.25).abs() < 1e-12);
    }

    #[test]
    fn best_response_splits_ties_evenly() {
        let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        let mut c = PathCosts::zeros(3, 1, 3600.0);
        c.values[[0, 0]] = 40.0;
        c.values[[1, 0]] = 40.0 * (1.0 + 1e-12);
        c.values[[2, 0]] = 10.0;
        let y = all_or_nothing(&c, &net).unwrap();
        assert_eq!(y.values[[0, 0]], 650.0);
        assert_eq!(y.values[[1, 0]], 650.0);
        assert_eq!(y.values[[2, 0]], 300.0);
        assert!(is_feasible(&y, &net).unwrap().feasible);
    }

    #[test]
    fn msa_second_iterate_is_first_best_response() {
        let net = two_route::network(140.0, 5.0, 1300.0, 300.0, 3600.0, 1);
        let problem = static_problem(&net);
        let params = SolverParams {
            max_iters: 2,
            eps: 1e-16,
            ..SolverParams::default()
        };
        let report = msa_solve(&problem, &params, None).unwrap();
        // Init sends everything to the short path; its congested cost then
        // exceeds the alternative, so the first best response flips.
        assert_eq!(report.iterations[0].step, 1.0);
        assert_eq!(report.final_assignment.values[[0, 0]], 0.0);
        assert_eq!(report.final_assignment.values[[1, 0]], 1300.0);
        assert_eq!(report.final_assignment.values[[2, 0]], 300.0);
    }

    #[test]
    fn constant_costs_converge_in_one_iteration() {
        // With gamma = 0 costs never change, so the free-flow best response
        // is already an equilibrium.
        let net = two_route::network(140.0, 0.0, 1300.0, 300.0, 3600.0, 1);
        let problem = static_problem(&net);
        let report = epm_solve(&problem, &SolverParams::default(), None).unwrap();
        assert!(report.converged);
        assert_eq!(report.termination, Termination::GapMet);
        assert_eq!(report.iterations.len(), 1);
        assert_eq!(report.final_gap(), 0.0);
    }

    #[test]
    fn vanishing_step_freezes_the_iterate() {
        let net = two_route::network(140.0, 5.0, 1300.0, 300.0, 3600.0, 1);
        let problem = static_problem(&net);
        let params = SolverParams {
            tau0: 1e-12,
            max_iters: 2,
            eps: 1e-16,
            ..SolverParams::default()
        };
        let report = epm_solve(&problem, &params, None).unwrap();
        let init = problem.default_init().unwrap();
        let drift = (&report.final_assignment.values - &init.values)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(drift < 1e-6, "iterate moved {drift} veh/hr");
    }

    /// Root of the cost-equality condition for the one-step network, found
    /// by bisection on the closed form.
    fn equal_cost_split(gamma: f64, d0: f64, d1: f64, cap: f64) -> f64 {
        let g = |h1: f64| (h1 + d1).powi(4) - 2.0 * (d0 - h1).powi(4) - cap.powi(4) / gamma;
        let (mut lo, mut hi) = (0.0, d0);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn frank_wolfe_finds_the_equal_cost_split() {
        for gamma in [5.0, 20.0] {
            let scenario = two_route::static_scenario(gamma);
            let report = solve_scenario(&scenario).unwrap();
            assert!(report.converged, "gamma {gamma}: {:?}", report.termination);
            assert!(report.final_gap() <= 1e-4);
            let expect = equal_cost_split(gamma, 1300.0, 300.0, 2000.0);
            let got = report.final_assignment.values[[0, 0]];
            assert!(
                (got - expect).abs() < 0.1,
                "gamma {gamma}: split {got}, expected {expect}"
            );
            let c = &report.final_costs.values;
            assert!((c[[0, 0]] - c[[1, 0]]).abs() < 0.05);
            for r in &report.iterations {
                assert!((0.0..=1.0).contains(&r.step));
            }
            assert_eq!(report.iterations.last().unwrap().step, 0.0);
        }
    }

    #[test]
    fn unchanging_gap_reports_a_stall() {
        let net = two_route::network(140.0, 0.0, 1300.0, 300.0, 3600.0, 1);
        let problem = static_problem(&net);
        // Negative tolerance disables the gap test so the constant-cost gap
        // of exactly zero has to trip the stall window instead.
        let params = SolverParams {
            eps: -1.0,
            max_iters: 500,
            ..SolverParams::default()
        };
        let report = msa_solve(&problem, &params, None).unwrap();
        assert_eq!(report.termination, Termination::Stalled);
        assert!(!report.converged);
        assert_eq!(report.iterations.len(), 50);
    }

    #[test]
    fn combined_solver_numbers_iterations_continuously() {
        let scenario = {
            let mut s = two_route::static_scenario(20.0);
            s.solver = SolverKind::MsaThenEpm;
            s.params.msa_warmup_iters = 3;
            s.params.max_iters = 60;
            s.params.eps = 1e-10;
            s.params.tau0 = 10.0;
            s
        };
        let report = solve_scenario(&scenario).unwrap();
        for (i, r) in report.iterations.iter().enumerate() {
            assert_eq!(r.k, i + 1);
        }
        assert!(report.iterations.len() > 3, "never reached the second phase");
        assert!(is_feasible(&report.final_assignment, &scenario.network)
            .unwrap()
            .feasible);
    }

    #[test]
    fn dynamic_solve_produces_feasible_iterates() {
        let net = two_route::network(140.0, 0.15, 900.0, 300.0, 5.0, 48);
        let problem = Problem {
            network: &net,
            model: ModelKind::Mn,
            cost_mode: CostMode::Instantaneous,
            steps: 48,
            dt_s: 5.0,
        };
        let params = SolverParams {
            max_iters: 30,
            tau0: 10.0,
            ..SolverParams::default()
        };
        let report = msa_solve(&problem, &params, None).unwrap();
        assert!(report.final_gap().is_finite());
        assert!(!report.iterations.is_empty());
        let feas = is_feasible(&report.final_assignment, &net).unwrap();
        assert!(feas.feasible, "violation {}", feas.max_violation_vph);
    }

    #[test]
    fn grid_steps_matches_profile_lengths() {
        let g = Grid::new(5.0, 240.0).unwrap();
        assert_eq!(g.steps().unwrap(), 48);
    }

    proptest! {
        #[test]
        fn best_response_and_gap_ignore_cost_scale(
            raw in proptest::array::uniform6(1.0f64..100.0),
            scale in prop_oneof![Just(0.5f64), Just(2.0), Just(10.0)],
        ) {
            let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 1800.0, 2);
            let mut c = PathCosts::zeros(3, 2, 1800.0);
            for p in 0..3 {
                for t in 0..2 {
                    c.values[[p, t]] = raw[p * 2 + t];
                }
            }
            let mut c_scaled = c.clone();
            c_scaled.values *= scale;
            let y = all_or_nothing(&c, &net).unwrap();
            let y2 = all_or_nothing(&c_scaled, &net).unwrap();
            prop_assert_eq!(&y.values, &y2.values);

            let mut h = DemandAssignment::zeros(3, 2, 1800.0);
            for t in 0..2 {
                h.values[[0, t]] = 400.0;
                h.values[[1, t]] = 900.0;
                h.values[[2, t]] = 300.0;
            }
            let g1 = relative_gap(&c, &h, &y).unwrap();
            let g2 = relative_gap(&c_scaled, &h, &y2).unwrap();
            prop_assert!(g1 >= 0.0);
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.max(1.0));
        }
    }
}
