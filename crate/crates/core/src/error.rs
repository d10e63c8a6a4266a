use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NliError {
    /// Input arrays have the wrong length or incompatible shapes.
    #[error("input shape: {0}")]
    InputShape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("index {index} with memory {memory} leaves the sequence of length {len}")]
    Index { index: usize, memory: usize, len: usize },

    /// Malformed kernel or training-set file.
    #[error("format: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimizer diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("csv column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NliError {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            NliError::Config(_) | NliError::Json(_) => 2,
            NliError::MissingArtifact { .. } => 3,
            NliError::Numerical(_) | NliError::Divergence { .. } | NliError::UndefinedMetric(_) => 4,
            _ => 1,
        }
    }
}
