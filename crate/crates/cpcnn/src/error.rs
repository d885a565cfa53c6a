//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed text or binary serialization payload.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset file could not be ingested; `offset` is the byte position of
    /// the first record that could not be read in full.
    #[error("ingestion error in {file} at byte {offset}: {message}")]
    Ingestion {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code for CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Ingestion { .. } => "ingestion",
            Error::Diverged(_) => "diverged",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
