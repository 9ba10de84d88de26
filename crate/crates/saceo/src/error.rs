//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Structural misconfiguration: bad dimensions, invalid hyperparameters,
    /// contradictory settings. Reported with every violation found.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse at runtime (empty buffer sampled, stepping past the
    /// horizon, stale gradient tape, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity surfaced where finite math was required.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// A data file failed to parse; `line` is 1-based.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
