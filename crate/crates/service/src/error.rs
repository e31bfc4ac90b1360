use oir_core::embedding::EmbeddingError;
use thiserror::Error;

use crate::job::JobStatus;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("batch contains no utterances")]
    EmptyBatch,
    #[error("{0}")]
    InvalidRequest(String),
    #[error("job {0:?} not found")]
    JobNotFound(String),
    #[error("job {id:?} is {status}, not completed")]
    JobNotCompleted { id: String, status: JobStatus },
    #[error("job {id:?} cannot move from {from} to {to}")]
    InvalidTransition { id: String, from: JobStatus, to: JobStatus },
    #[error("no model loaded")]
    ModelUnavailable,
    #[error("store log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Parse { .. } => "parse_error",
            Self::DuplicateId { .. } => "duplicate_id",
            Self::EmptyBatch => "empty_batch",
            Self::InvalidRequest(_) => "invalid_request",
            Self::JobNotFound(_) => "job_not_found",
            Self::JobNotCompleted { .. } => "job_not_completed",
            Self::InvalidTransition { .. } => "invalid_transition",
            Self::ModelUnavailable => "model_unavailable",
            Self::Corrupt { .. } => "store_corrupt",
            Self::Io(_) => "io_error",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Self::Parse { .. } | Self::DuplicateId { .. } | Self::EmptyBatch | Self::InvalidRequest(_) => 400,
            Self::JobNotFound(_) => 404,
            Self::JobNotCompleted { .. } | Self::InvalidTransition { .. } | Self::ModelUnavailable => 409,
            Self::Corrupt { .. } | Self::Io(_) => 500,
        }
    }
}

impl From<EmbeddingError> for ServiceError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DuplicateId { line, id } => Self::DuplicateId { line, id },
            EmbeddingError::Parse { line, message } => Self::Parse { line, message },
            EmbeddingError::EmptyText { line } => Self::Parse {
                line,
                message: "text is empty".into(),
            },
            EmbeddingError::EmptyId { line } => Self::Parse {
                line,
                message: "id is empty".into(),
            },
            EmbeddingError::Io(e) => Self::Io(e),
            other => Self::InvalidRequest(other.to_string()),
        }
    }
}
