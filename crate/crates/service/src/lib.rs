//! Batch jobs over the open intent recognition pipeline: an append-only
//! job store, result queries and reports, and the HTTP API.

pub mod error;
pub mod http;
pub mod job;
pub mod query;
pub mod store;

pub use error::ServiceError;
pub use job::{BatchJob, JobConfig, JobStatus};
pub use store::Store;
