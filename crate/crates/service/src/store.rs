//! File-backed job store. Every change is one JSON line appended to
//! `store.log` and synced before it becomes visible; opening a store replays
//! the log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use oir_core::embedding::Utterance;
use oir_core::pipeline::PipelineOutput;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::job::{now, BatchJob, JobConfig, JobStatus};

pub const LOG_FILE: &str = "store.log";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Created { job: BatchJob, utterances: Vec<Utterance> },
    Started { id: String },
    Completed {
        id: String,
        finished_at: DateTime<Utc>,
        output: PipelineOutput,
    },
    Failed {
        id: String,
        finished_at: DateTime<Utc>,
        error: String,
    },
}

#[derive(Debug)]
struct JobState {
    job: BatchJob,
    utterances: Arc<Vec<Utterance>>,
    output: Option<Arc<PipelineOutput>>,
}

type Jobs = BTreeMap<String, JobState>;

struct Writer {
    file: File,
    next_id: u64,
}

pub struct Store {
    path: PathBuf,
    writer: Mutex<Writer>,
    jobs: RwLock<Jobs>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish_non_exhaustive()
    }
}

fn check(jobs: &Jobs, entry: &Entry) -> Result<(), ServiceError> {
    let (id, to) = match entry {
        Entry::Created { job, .. } => {
            return if jobs.contains_key(&job.id) {
                Err(ServiceError::InvalidRequest(format!("job {:?} already exists", job.id)))
            } else {
                Ok(())
            };
        }
        Entry::Started { id } => (id, JobStatus::Running),
        Entry::Completed { id, .. } => (id, JobStatus::Completed),
        Entry::Failed { id, .. } => (id, JobStatus::Failed),
    };
    let from = jobs
        .get(id)
        .ok_or_else(|| ServiceError::JobNotFound(id.clone()))?
        .job
        .status;
    if from.can_move_to(to) {
        Ok(())
    } else {
        Err(ServiceError::InvalidTransition {
            id: id.clone(),
            from,
            to,
        })
    }
}

/// Apply a checked entry and return the affected job.
fn apply(jobs: &mut Jobs, entry: Entry) -> BatchJob {
    match entry {
        Entry::Created { job, utterances } => {
            let out = job.clone();
            jobs.insert(
                job.id.clone(),
                JobState {
                    job,
                    utterances: Arc::new(utterances),
                    output: None,
                },
            );
            out
        }
        Entry::Started { id } => {
            let s = jobs.get_mut(&id).expect("checked");
            s.job.status = JobStatus::Running;
            s.job.clone()
        }
        Entry::Completed { id, finished_at, output } => {
            let s = jobs.get_mut(&id).expect("checked");
            s.job.status = JobStatus::Completed;
            s.job.finished_at = Some(finished_at);
            s.job.counts = Some(output.counts);
            s.output = Some(Arc::new(output));
            s.job.clone()
        }
        Entry::Failed { id, finished_at, error } => {
            let s = jobs.get_mut(&id).expect("checked");
            s.job.status = JobStatus::Failed;
            s.job.finished_at = Some(finished_at);
            s.job.error = Some(error);
            s.job.clone()
        }
    }
}

fn job_number(id: &str) -> Option<u64> {
    id.strip_prefix("job-")?.parse().ok()
}

impl Store {
    /// Open or create the store in `dir`. A last line without a newline is
    /// a write that never finished; it is dropped and truncated away.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut jobs = Jobs::new();
        let mut next_id = 1;
        let mut valid_len = 0;
        for (i, line) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
            if line.last() != Some(&b'\n') {
                break;
            }
            let corrupt = |message: String| ServiceError::Corrupt { line: i + 1, message };
            let entry: Entry = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
            check(&jobs, &entry).map_err(|e| corrupt(e.to_string()))?;
            if let Entry::Created { job, .. } = &entry {
                if let Some(n) = job_number(&job.id) {
                    next_id = next_id.max(n + 1);
                }
            }
            apply(&mut jobs, entry);
            valid_len += line.len();
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if valid_len < bytes.len() {
            file.set_len(valid_len as u64)?;
            file.sync_all()?;
        }
        Ok(Self {
            path,
            writer: Mutex::new(Writer { file, next_id }),
            jobs: RwLock::new(jobs),
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.path
    }

    fn commit(&self, writer: &mut Writer, entry: Entry) -> Result<BatchJob, ServiceError> {
        check(&self.jobs.read().expect("store lock"), &entry)?;
        let mut line = serde_json::to_vec(&entry).expect("entries serialize");
        line.push(b'\n');
        writer.file.write_all(&line)?;
        writer.file.sync_data()?;
        Ok(apply(&mut self.jobs.write().expect("store lock"), entry))
    }

    /// Persist a new queued job with its input.
    pub fn create(&self, utterances: Vec<Utterance>, config: JobConfig) -> Result<BatchJob, ServiceError> {
        if utterances.is_empty() {
            return Err(ServiceError::EmptyBatch);
        }
        let mut w = self.writer.lock().expect("store lock");
        let job = BatchJob {
            id: format!("job-{:06}", w.next_id),
            status: JobStatus::Queued,
            created_at: now(),
            finished_at: None,
            counts: None,
            config_snapshot: config,
            error: None,
        };
        let job = self.commit(&mut w, Entry::Created { job, utterances })?;
        w.next_id += 1;
        Ok(job)
    }

    pub fn start(&self, id: &str) -> Result<BatchJob, ServiceError> {
        let mut w = self.writer.lock().expect("store lock");
        self.commit(&mut w, Entry::Started { id: id.to_string() })
    }

    pub fn complete(&self, id: &str, output: PipelineOutput) -> Result<BatchJob, ServiceError> {
        let mut w = self.writer.lock().expect("store lock");
        self.commit(
            &mut w,
            Entry::Completed {
                id: id.to_string(),
                finished_at: now(),
                output,
            },
        )
    }

    pub fn fail(&self, id: &str, error: String) -> Result<BatchJob, ServiceError> {
        let mut w = self.writer.lock().expect("store lock");
        self.commit(
            &mut w,
            Entry::Failed {
                id: id.to_string(),
                finished_at: now(),
                error,
            },
        )
    }

    pub fn job(&self, id: &str) -> Result<BatchJob, ServiceError> {
        self.with_job(id, |s| s.job.clone())
    }

    /// All jobs in id order.
    pub fn jobs(&self) -> Vec<BatchJob> {
        self.jobs
            .read()
            .expect("store lock")
            .values()
            .map(|s| s.job.clone())
            .collect()
    }

    pub fn utterances(&self, id: &str) -> Result<Arc<Vec<Utterance>>, ServiceError> {
        self.with_job(id, |s| s.utterances.clone())
    }

    /// Output of a completed job.
    pub fn output(&self, id: &str) -> Result<Arc<PipelineOutput>, ServiceError> {
        self.with_job(id, |s| {
            s.output.clone().ok_or_else(|| ServiceError::JobNotCompleted {
                id: id.to_string(),
                status: s.job.status,
            })
        })?
    }

    fn with_job<T>(&self, id: &str, f: impl FnOnce(&JobState) -> T) -> Result<T, ServiceError> {
        let jobs = self.jobs.read().expect("store lock");
        jobs.get(id).map(f).ok_or_else(|| ServiceError::JobNotFound(id.to_string()))
    }

    /// Mark jobs left running by a previous process as failed and return
    /// the ids of jobs still queued.
    pub fn recover(&self) -> Result<Vec<String>, ServiceError> {
        let jobs = self.jobs();
        for j in jobs.iter().filter(|j| j.status == JobStatus::Running) {
            self.fail(&j.id, "interrupted by shutdown".into())?;
        }
        Ok(jobs
            .into_iter()
            .filter(|j| j.status == JobStatus::Queued)
            .map(|j| j.id)
            .collect())
    }
}
