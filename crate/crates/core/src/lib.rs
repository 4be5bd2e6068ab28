//! Path-based user-equilibrium traffic assignment.
//!
//! The crate models route choice over a road network as a variational
//! inequality: find a feasible demand assignment `h*` (vehicles/hour per path
//! and departure timestep) such that `<F(h*), h - h*> >= 0` for every feasible
//! `h`, where `F` maps an assignment to the vector of path travel costs. At a
//! solution no driver can reduce their travel time by switching paths
//! (Wardrop's first principle).
//!
//! The pieces are interchangeable:
//!
//! * **Traffic models** turn an assignment into link flows or a full state
//!   trajectory: a static link-performance model, a point-queue model whose
//!   links accept inflow at capacity regardless of congestion ([`ModelKind::Mn`]),
//!   and a cell-transmission model with backward wave propagation
//!   ([`ModelKind::Ctm`]).
//! * **Cost modes** turn model output into path costs: BPR link delays for the
//!   static model, and instantaneous or predictive (experienced) travel times
//!   for the dynamic models.
//! * **Solvers** drive the assignment toward equilibrium: Frank-Wolfe with
//!   exact line search (static only), the method of successive averages, and
//!   an extragradient projection method, plus an MSA-warm-started chain.
//!
//! [`scenario`] bundles a network, model choice, cost mode, solver
//! configuration, and time grid into a single solvable description, and ships
//! a small two-route merge network used throughout the tests and benches.

pub mod assignment;
pub mod cost;
pub mod error;
pub mod metrics;
pub mod models;
pub mod network;
pub mod scenario;
pub mod solvers;

pub use assignment::{DemandAssignment, Feasibility, PathCosts, FEASIBILITY_TOL_VPH};
pub use error::Error;
pub use metrics::{min_path_cost, wardrop_distance_flow, wardrop_distance_state};
pub use models::{run_loading, static_flows, StateTrajectory};
pub use network::{
    build_incidence, Diagnostic, DemandProfile, IncidenceMatrix, Link, Network, ODPair, Path,
    Severity,
};
pub use scenario::{CostMode, Grid, ModelKind, Scenario, SolverKind, SolverParams};
pub use solvers::{
    all_or_nothing, epm_solve, fw_solve, msa_solve, relative_gap, solve_scenario, IterationRecord,
    Problem, SolverReport, Termination,
};
