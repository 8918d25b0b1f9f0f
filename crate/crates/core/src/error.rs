//! Error taxonomy shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid generator spec or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API contract (shape mismatch, label out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Filesystem failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not what the format requires.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Not enough data to run an operation (e.g. clustering fewer points than K).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A loss or gradient became non-finite during training.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
