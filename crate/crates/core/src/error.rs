//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by model evaluation, configuration and sampling.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A covariance matrix could not be factorized even after jitter
    /// escalation. For MCMC this is treated as log-likelihood = -inf.
    #[error("Cholesky factorization failed after jitter escalation (scale {scale:.3e})")]
    CholeskyFailure {
        /// Mean of the matrix diagonal at the time of failure.
        scale: f64,
    },

    /// Model evaluation produced a non-finite quantity.
    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    /// A configuration value is inconsistent or out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The simulator state left the representable range.
    #[error("simulation diverged: {0}")]
    SimulationDiverged(String),

    /// Too many per-unit failures inside a batched operation.
    #[error("too many failures: {failed} of {total} units failed ({detail})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        detail: String,
    },

    /// Configuration file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
