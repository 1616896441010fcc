//! Crate-wide error type.
//!
//! Variants are grouped by failure class so callers (the CLI in
//! particular) can map them onto coarse exit codes: configuration and
//! usage problems, data problems, and numeric failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field is out of range or inconsistent.
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// Input data cannot be used: missing terminal, malformed file,
    /// class deficit, shape mismatch between model and data.
    #[error("data error: {0}")]
    Data(String),

    /// A model file failed validation on load.
    #[error("model file error: {0}")]
    ModelFile(String),

    /// Numeric failure during training or inference (divergence,
    /// non-finite values).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field, reason: reason.into() }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
