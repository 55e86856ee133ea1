use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric inconsistency: concurrence radicand {radicand:e} is below the clamp threshold")]
    NumericInconsistency { radicand: f64 },

    #[error("integration diverged at step {step}: {reason}")]
    IntegrationDiverged { step: usize, reason: String },

    #[error("optimization stalled: no descent direction found from any start (best value {best})")]
    OptimizationStalled { best: f64 },

    #[error("insufficient data: {points} samples inside the fit window, need at least {required}")]
    InsufficientData { points: usize, required: usize },

    #[error("fit window truncated: non-positive value inside the window after retry")]
    WindowTruncated,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
