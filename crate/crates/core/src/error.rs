use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PeoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PeoError {
    /// Two operands that must share a shape do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Embeddings or features with different encoder layouts were combined.
    #[error("encoder structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("zero-norm vector passed as `{argument}`")]
    ZeroNorm { argument: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backbone error: {0}")]
    Backbone(String),

    #[error("fixture error: {0}")]
    Fixture(String),

    #[error("scorer failed: {0}")]
    Scorer(String),

    #[error("no successful rows to aggregate")]
    EmptyAggregate,

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

impl PeoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
