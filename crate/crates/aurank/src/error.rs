//! Crate-wide error type and the process exit codes the CLI maps it to.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("missing stage artifact: {0}")]
    MissingStage(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 0 success, 2 config error, 3 data error, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::Shape(_)
            | Error::InvalidInput(_)
            | Error::MissingStage(_)
            | Error::UndefinedMetric(_) => 2,
            Error::EmptyDataset(_)
            | Error::Schema(_)
            | Error::Alignment(_)
            | Error::Io { .. }
            | Error::Serde(_)
            | Error::Csv(_) => 3,
            Error::Divergence { .. } => 4,
        }
    }
}
