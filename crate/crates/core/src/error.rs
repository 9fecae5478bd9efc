use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// usage/config problems exit 2, pipeline-integrity problems exit 3,
/// numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("frame pairing: {0}")]
    Pairing(String),

    #[error("topology file {path}: {message}")]
    Topology { path: String, message: String },

    #[error("pipeline integrity: {0}")]
    Integrity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("backend '{backend}': {message}")]
    Backend { backend: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code for the CLI contract: 2 usage, 3 integrity, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Integrity(_) => 3,
            Error::Numerical(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
