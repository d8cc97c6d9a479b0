//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument is outside its valid domain (bad index, negative rate, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid run configuration; reported before any iteration runs.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk data. `offset` is the byte position of the defect.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Checkpoint could not be loaded (bad header, hash mismatch, truncation).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// An internal bookkeeping contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
