//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by network construction, model evaluation, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An array argument does not match the network/grid dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An id referenced by a path or OD pair does not resolve.
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),

    /// A negative link flow was passed to a link performance function.
    #[error("negative flow {flow} on link {link}")]
    NegativeFlow { link: u64, flow: f64 },

    /// A negative demand target was passed to the simplex projection.
    #[error("negative demand target {0}")]
    NegativeDemand(f64),

    /// The model, cost mode, and solver combination is not supported.
    #[error("incompatible configuration: {0}")]
    IncompatibleConfig(String),

    /// A link would be traversed in less than one timestep at free flow,
    /// violating the discretization's stability condition.
    #[error(
        "CFL violation on link {link}: free-flow speed covers {travel_m:.1} m \
         in one {dt_s} s step but the link is only {length_m:.1} m long"
    )]
    CflViolation {
        link: u64,
        travel_m: f64,
        dt_s: f64,
        length_m: f64,
    },

    /// The time grid does not divide the horizon into whole steps, or two
    /// grids that must agree do not.
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    /// The network failed validation; each entry names one violated invariant.
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<crate::network::Diagnostic>),
}
