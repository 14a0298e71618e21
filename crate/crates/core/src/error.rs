//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by distribution queries, simulation, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an out-of-domain parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A sampled horizon exceeded the instance's simulation time cap.
    #[error("sampled horizon {horizon} exceeds time cap {cap}")]
    CapExceeded { horizon: u64, cap: u64 },

    /// A conditional quantity was requested past the end of the support.
    #[error("hazard undefined at t={t}: survival probability is zero")]
    UndefinedHazard { t: u64 },

    /// A threshold rule accepts with probability zero, so conditioning on
    /// acceptance is undefined.
    #[error("degenerate threshold rule: acceptance probability is zero")]
    DegenerateRule,

    /// All sampling weights were zero.
    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),

    /// The simulator observed the policy doing something impossible
    /// (matching a departed or already-matched item).
    #[error("episode audit violation: {0}")]
    AuditViolation(String),

    /// An iterative numeric routine failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// The LP solver hit its iteration cap.
    #[error("simplex iteration limit reached after {0} pivots")]
    LpIterationLimit(u64),

    /// The LP is unbounded (should not happen for the shipped models).
    #[error("linear program is unbounded")]
    LpUnbounded,

    /// A nested-menu increment was materially negative, i.e. the supplied LP
    /// solution does not satisfy the monotone rows.
    #[error("negative menu increment {value} for item {item} at step {step}")]
    NegativeIncrement { item: usize, step: u64, value: f64 },

    /// The requested exact computation is too large to enumerate.
    #[error("instance too large for exact computation: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
