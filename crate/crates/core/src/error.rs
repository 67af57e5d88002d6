//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulation and rate computations.
#[derive(Debug, Error)]
pub enum CoalError {
    /// Caller violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric routine failed to reach its requested accuracy.
    #[error("numeric failure in {what}: achieved tolerance {achieved:e}, requested {requested:e}")]
    Numeric {
        what: String,
        achieved: f64,
        requested: f64,
    },

    /// An iteration failed to contract within the configured cap.
    #[error("divergent iteration: {0}")]
    Divergence(String),

    /// File or stream problem.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoalError>;

impl CoalError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CoalError::InvalidArgument(msg.into())
    }
}
