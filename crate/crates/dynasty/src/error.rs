//! Error types shared across the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, DynastyError>;

/// Errors emitted by tensor, model, training, data and eval code.
#[derive(Error, Debug)]
pub enum DynastyError {
    /// Operand shapes do not conform to an operation's rule.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: String, detail: String },

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// Two evaluations of a supposedly deterministic function differed.
    #[error("determinism error: {0}")]
    Determinism(String),

    /// Not enough input data to build the requested structure.
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// An operation produced a non-finite value from finite inputs.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A stored artifact does not match its documented format.
    #[error("format error: {0}")]
    Format(String),
}

impl DynastyError {
    pub(crate) fn dim(op: impl Into<String>, detail: impl Into<String>) -> Self {
        DynastyError::Dimension { op: op.into(), detail: detail.into() }
    }
}
