use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use oir_core::embedding::{read_utterances, validate_utterances, EmbeddingMatrix, Utterance};
use oir_core::pipeline::{run_pipeline, Counts, IntentModel, Labeler, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

impl JobStatus {
    pub fn can_move_to(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (Self::Queued, Self::Running) | (Self::Running, Self::Completed) | (Self::Running, Self::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Failed)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Queued => "queued",
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Failed => "failed",
        })
    }
}

/// Everything a job needs to be rerun identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    /// Path of the model file the job was submitted against.
    pub model: String,
    /// Embedding JSONL used instead of the model's TF-IDF vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchJob {
    pub id: String,
    pub status: JobStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    /// Unset until the job completes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    pub config_snapshot: JobConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Current UTC time at millisecond precision.
pub fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

/// Parse a batch body: a JSON array of utterances, or utterance JSONL.
pub fn parse_batch(body: &[u8]) -> Result<Vec<Utterance>, ServiceError> {
    let text = std::str::from_utf8(body).map_err(|e| ServiceError::InvalidRequest(format!("body is not UTF-8: {e}")))?;
    let batch = if text.trim_start().starts_with('[') {
        let batch: Vec<Utterance> = serde_json::from_str(text).map_err(|e| ServiceError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        validate_utterances(&batch)?;
        batch
    } else {
        read_utterances(text.as_bytes())?
    };
    if batch.is_empty() {
        return Err(ServiceError::EmptyBatch);
    }
    Ok(batch)
}

/// Run a queued job to completion. Pipeline errors fail the job; store
/// errors are returned.
pub fn execute(
    store: &Store,
    id: &str,
    model: &IntentModel,
    embeddings: Option<&EmbeddingMatrix>,
    labeler: &Labeler,
) -> Result<BatchJob, ServiceError> {
    let job = store.start(id)?;
    let batch = store.utterances(id)?;
    match run_pipeline(id, &batch, model, embeddings, labeler, &job.config_snapshot.pipeline) {
        Ok(out) => store.complete(id, out),
        Err(e) => store.fail(id, e.to_string()),
    }
}
