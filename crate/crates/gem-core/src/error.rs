//! Error taxonomy shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GemError {
    /// Caller handed us an argument that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor/graph shapes do not line up.
    #[error("shape error: {0}")]
    Structural(String),

    /// A computation produced NaN/Inf or an otherwise unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A dataset file is missing or unreadable.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A dataset file exists but its contents are malformed.
    #[error("format error in {file} line {line}: {msg}")]
    Format {
        file: String,
        line: usize,
        msg: String,
    },

    /// Training diverged or could not proceed.
    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// Run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage was invoked before its upstream artifact exists.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GemError {
    /// CLI exit code: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            GemError::InvalidInput(_)
            | GemError::Config(_)
            | GemError::MissingArtifact(_)
            | GemError::Ingestion(_)
            | GemError::Format { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, GemError>;
