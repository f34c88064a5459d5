//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by simulation components.
#[derive(Debug, Error)]
pub enum Error {
    /// Two state vectors (or a regressor and a state) disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Every candidate neighbor was excluded before computing weights.
    #[error("combination weights requested over an empty neighbor set")]
    AllExcluded,

    /// The rank-one LMS update is not invertible this round.
    #[error("singular LMS update: |1 - mu*|u|^2| = {margin:.3e}")]
    SingularUpdate { margin: f64 },

    /// Division by the attack step size r = 0 in the non-stationary branch.
    #[error("attack reference requires r > 0 for non-stationary goals")]
    ZeroStepSize,

    /// Cost estimation needs at least one stored observation.
    #[error("cost estimation over an empty data window")]
    EmptyWindow,

    /// Theoretical MSD formulas that divide by N or N-1 reject degenerate networks.
    #[error("theoretical MSD undefined: {0}")]
    DegenerateNetwork(String),

    /// Invalid scenario configuration; `path` locates the offending field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Failure while writing trace or summary files.
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure while serializing results.
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
