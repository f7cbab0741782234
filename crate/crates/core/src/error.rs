//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by tensor ops, data ingestion, training, and evaluation.
#[derive(Debug, Error)]
pub enum ScanError {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset, manifest, or file-format problem.
    #[error("data error: {0}")]
    Data(String),

    /// Incompatible tensor shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScanError {
    pub fn config(msg: impl Into<String>) -> Self {
        ScanError::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        ScanError::Data(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        ScanError::Shape(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        ScanError::Numeric(msg.into())
    }
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ScanError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, ScanError>;
