use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::TrainHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid label {label}: {reason}")]
    InvalidLabel { label: i64, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("degenerate embedding: sample {index} has zero norm")]
    DegenerateEmbedding { index: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged {
        epoch: usize,
        history: Box<TrainHistory>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
