use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward: {0}")]
    Backward(String),

    #[error("exact enumeration refused: {edges} edges exceeds the limit of {limit}")]
    TooManyEdges { edges: usize, limit: usize },

    #[error("infeasible budget: {0}")]
    Infeasible(String),

    #[error("non-finite loss during {stage} at index {index}")]
    NonFinite { stage: &'static str, index: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("stale artifact {path}: recorded hash {expected} but found {found}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
