use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("k too large: k={k} but only {nodes} nodes")]
    KTooLarge { k: usize, nodes: usize },

    #[error("dense eigensolver cap exceeded: {nodes} nodes > cap {cap}")]
    SolverCap { nodes: usize, cap: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("node {node} has no incoming edges (softmax over an empty neighbourhood)")]
    IsolatedNode { node: usize },

    #[error("no labelled nodes")]
    NoLabels,

    #[error("non-finite value in {location}")]
    NonFinite { location: String },

    #[error("grid too large: {points} points exceeds cap {cap}")]
    GridTooLarge { points: u128, cap: u128 },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Eigen(_) | Error::IsolatedNode { .. }
        )
    }
}
