//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library. Programming errors (shape mismatches inside
/// the autodiff graph) panic instead; everything that depends on runtime inputs
/// comes through here.
#[derive(Error, Debug)]
pub enum FbmError {
    /// A caller violated an operation's contract (bad action, empty batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed configuration file or unknown key/value.
    #[error("config error: {0}")]
    Config(String),

    /// Command-line usage error (unknown flag, missing required flag).
    #[error("usage error: {0}")]
    Usage(String),

    /// A serialized artifact (dataset, checkpoint, manifest) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {quantity} is not finite")]
    Diverged { step: u64, quantity: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FbmError>;

impl FbmError {
    pub fn contract(msg: impl Into<String>) -> Self {
        FbmError::Contract(msg.into())
    }
}
