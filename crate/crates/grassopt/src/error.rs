//! Crate-wide error type.

use crate::optimizer::Trace;

/// Errors produced by geometry, objectives, oracles, optimizers, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix or vector shapes do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A caller violated an operation contract (non-tangent input, base mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A channelized covariance failed its Cholesky factorization.
    #[error("channelized covariance is not positive definite: {0}")]
    SingularChannel(String),

    /// An ambient covariance failed its Cholesky factorization.
    #[error("covariance is not positive definite: {0}; increase the diagonal nugget")]
    NotPositiveDefinite(String),

    /// Covariance estimation needs at least two samples.
    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    /// Invalid configuration value or malformed config file.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Backtracking exceeded its budget without satisfying sufficient decrease.
    #[error(
        "line search stalled at iteration {iteration} after {backtracks} backtracks (eta {eta:.3e}); \
         the gradient error may exceed its relative bound or the objective may not be smooth here"
    )]
    LineSearchStall {
        iteration: usize,
        backtracks: u32,
        eta: f64,
    },

    /// The objective produced a non-finite value.
    #[error("objective diverged (non-finite value) at iteration {iteration}")]
    Diverged { iteration: usize },

    /// A gradient oracle kept failing after its retry budget.
    #[error("gradient oracle failed at iteration {iteration} after {attempts} attempts: {cause}")]
    OracleExhausted {
        iteration: usize,
        attempts: u32,
        cause: String,
    },

    /// An optimization run aborted; carries the trace accumulated so far.
    #[error("optimization run failed at iteration {iteration}: {cause}")]
    Run {
        iteration: usize,
        cause: Box<Error>,
        trace: Box<Trace>,
    },

    /// An artifact was produced under a different configuration.
    #[error("config hash mismatch: artifact was produced under {artifact_hash}, current config is {config_hash}")]
    HashMismatch {
        artifact_hash: String,
        config_hash: String,
    },

    /// A data file failed to parse.
    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code class: 2 config, 3 numerical, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::HashMismatch { .. } => 2,
            Error::Dimension { .. }
            | Error::Contract(_)
            | Error::SingularChannel(_)
            | Error::NotPositiveDefinite(_)
            | Error::InsufficientSamples { .. }
            | Error::LineSearchStall { .. }
            | Error::Diverged { .. }
            | Error::OracleExhausted { .. } => 3,
            Error::Run { cause, .. } => cause.exit_code(),
            Error::Io(_) | Error::Json(_) | Error::Malformed { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(
    context: &'static str,
    expected: impl std::fmt::Display,
    got: impl std::fmt::Display,
) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
