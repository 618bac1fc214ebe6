use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator, store, and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a cycle through node {node}")]
    Cycle { node: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("node {node} out of range for a graph of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("size {got} exceeds the supported maximum of {max}")]
    Size { got: usize, max: usize },

    #[error("mismatched shapes: {0}")]
    Mismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame decode failed at cell ({row}, {col}): {reason}")]
    Decode {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("unsupported or malformed dataset in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupted blob {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("insufficient data: untested pairs {0:?}")]
    InsufficientData(Vec<(u16, u16)>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
