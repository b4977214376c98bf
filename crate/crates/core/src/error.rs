use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical routines distinguish between *input* problems (dimension
/// mismatches, unsupported modes, malformed configuration), which are bugs in
/// the caller, and *runtime* problems (divergence, iteration limits, failed
/// convergence), which carry enough context to diagnose the run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("trajectory diverged to a non-finite state at step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("iteration limit {limit} reached; last residual {residual:.3e} (target {target:.3e})")]
    IterationLimit {
        limit: usize,
        residual: f64,
        target: f64,
    },

    #[error("endpoint optimization did not converge: residual {residual:.3e} exceeds {tolerance:.3e}")]
    EndpointResidual { residual: f64, tolerance: f64 },

    #[error("solver produced a non-finite value at node {node} during step {step}")]
    NonFiniteValue { node: usize, step: usize },

    #[error("semigroup monotonicity violated by {worst:.3e} (allowed {allowed:.3e})")]
    MonotonicityViolated { worst: f64, allowed: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed field file: {0}")]
    FieldFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
