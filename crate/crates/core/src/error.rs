//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two inputs that must agree in length or shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A non-finite value surfaced during training or aggregation.
    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    /// An oracle sampler was asked to propose without full per-client
    /// feedback for the round (oracle instrumentation mode is required).
    #[error("sampler requires full per-round feedback; enable oracle instrumentation")]
    OracleFeedbackRequired,

    /// Text input (config, data file, CSV) could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
