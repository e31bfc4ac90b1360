use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use oir_core::discovery::{KChoice, Method};
use oir_core::embedding::EmbeddingMatrix;
use oir_core::pipeline::{IntentModel, Labeler, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::job::{execute, parse_batch, JobConfig};
use crate::query::{query_results, render_report, ReportFormat, ResultQuery};
use crate::store::Store;

/// Shared state behind every handler.
pub struct Service {
    pub store: Arc<Store>,
    pub model: Option<Arc<IntentModel>>,
    pub model_path: String,
    pub embeddings: Option<(String, Arc<EmbeddingMatrix>)>,
    pub labeler: Arc<Labeler>,
    pub defaults: PipelineConfig,
}

impl Service {
    /// Run a queued job on the blocking pool.
    pub fn spawn_job(self: &Arc<Self>, id: String) {
        let svc = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let Some(model) = svc.model.clone() else { return };
            let embeddings = svc.embeddings.as_ref().map(|(_, m)| m.as_ref());
            if let Err(e) = execute(&svc.store, &id, &model, embeddings, &svc.labeler) {
                eprintln!("job {id}: {e}");
            }
        });
    }

    /// Fail jobs interrupted by a previous shutdown and rerun queued ones.
    pub fn resume(self: &Arc<Self>) -> Result<usize, ServiceError> {
        let queued = self.store.recover()?;
        if self.model.is_none() {
            return Ok(0);
        }
        let n = queued.len();
        for id in queued {
            self.spawn_job(id);
        }
        Ok(n)
    }
}

pub struct ApiError(pub ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        Self(e.into())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            code: self.0.code(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

fn bad_query(e: QueryRejection) -> ApiError {
    ApiError(ServiceError::InvalidRequest(e.body_text()))
}

type Shared = State<Arc<Service>>;

#[derive(Debug, Default, Deserialize)]
struct BatchParams {
    k: Option<String>,
    seed: Option<u64>,
    min_discover: Option<usize>,
    method: Option<String>,
}

#[derive(Serialize)]
struct Created {
    job_id: String,
}

async fn create_batch(
    State(svc): Shared,
    params: Result<Query<BatchParams>, QueryRejection>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Query(p) = params.map_err(bad_query)?;
    if svc.model.is_none() {
        return Err(ServiceError::ModelUnavailable.into());
    }
    let mut pipeline = svc.defaults.clone();
    let invalid = |e: &dyn std::fmt::Display| ServiceError::InvalidRequest(e.to_string());
    if let Some(k) = &p.k {
        pipeline.clustering.k = k.parse::<KChoice>().map_err(|e| invalid(&e))?;
    }
    if let Some(m) = &p.method {
        pipeline.clustering.method = m.parse::<Method>().map_err(|e| invalid(&e))?;
    }
    if let Some(s) = p.seed {
        pipeline.clustering.seed = s;
    }
    if let Some(n) = p.min_discover {
        pipeline.min_discover = n;
    }
    let batch = parse_batch(&body)?;
    if let Some((_, m)) = &svc.embeddings {
        if let Some(u) = batch.iter().find(|u| m.get(&u.id).is_none()) {
            return Err(ServiceError::InvalidRequest(format!("no embedding for utterance {:?}", u.id)).into());
        }
    }
    let config = JobConfig {
        model: svc.model_path.clone(),
        embeddings: svc.embeddings.as_ref().map(|(p, _)| p.clone()),
        pipeline,
    };
    let store = Arc::clone(&svc.store);
    let job = tokio::task::spawn_blocking(move || store.create(batch, config))
        .await
        .map_err(|e| ServiceError::InvalidRequest(e.to_string()))??;
    svc.spawn_job(job.id.clone());
    Ok((StatusCode::CREATED, Json(Created { job_id: job.id })))
}

async fn list_jobs(State(svc): Shared) -> impl IntoResponse {
    Json(svc.store.jobs())
}

async fn get_job(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.store.job(&id)?).into_response())
}

async fn get_results(
    State(svc): Shared,
    Path(id): Path<String>,
    q: Result<Query<ResultQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(bad_query)?;
    let out = svc.store.output(&id)?;
    Ok(Json(query_results(&id, &out.records, &q)?).into_response())
}

#[derive(Deserialize)]
struct ReportParams {
    format: Option<String>,
}

async fn get_report(
    State(svc): Shared,
    Path(id): Path<String>,
    q: Result<Query<ReportParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(bad_query)?;
    let format = q.format.as_deref().map_or(Ok(ReportFormat::Csv), str::parse)?;
    let job = svc.store.job(&id)?;
    let out = svc.store.output(&id)?;
    let body = render_report(format, &job, &out.intents, &out.records);
    let (ctype, ext) = match format {
        ReportFormat::Csv => ("text/csv; charset=utf-8", "csv"),
        ReportFormat::Json => ("application/json", "json"),
    };
    let disposition = format!("attachment; filename=\"{id}.{ext}\"");
    Ok(([(header::CONTENT_TYPE, ctype.to_string()), (header::CONTENT_DISPOSITION, disposition)], body).into_response())
}

#[derive(Serialize)]
struct KnownIntent {
    label: String,
    radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
}

#[derive(Serialize)]
struct IntentsBody {
    model: String,
    mode: String,
    dim: usize,
    intents: Vec<KnownIntent>,
}

async fn get_intents(State(svc): Shared) -> Result<Response, ApiError> {
    let model = svc.model.as_ref().ok_or(ServiceError::ModelUnavailable)?;
    let d = &model.detector;
    let intents = d
        .labels()
        .iter()
        .zip(d.radii())
        .enumerate()
        .map(|(i, (label, &radius))| KnownIntent {
            label: label.clone(),
            radius,
            count: d.counts().get(i).copied(),
        })
        .collect();
    Ok(Json(IntentsBody {
        model: svc.model_path.clone(),
        mode: d.mode().to_string(),
        dim: d.dim(),
        intents,
    })
    .into_response())
}

async fn not_found() -> Response {
    let body = ErrorBody {
        code: "not_found",
        message: "no such route".into(),
    };
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/batches", post(create_batch))
        .route("/v1/jobs", get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/jobs/{id}/results", get(get_results))
        .route("/v1/jobs/{id}/report", get(get_report))
        .route("/v1/intents", get(get_intents))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(svc)
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, svc: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
