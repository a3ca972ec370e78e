//! HTTP/JSON service over the experiment harness.
//!
//! Long operations (runs, sweeps, checkpoint evaluation) become jobs that run
//! on the blocking pool, at most `max_jobs` at a time, and are polled through
//! `/v1/jobs/{id}`.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mvcont_core::api::{
    ConfigRequest, ErrorBody, EvalRequest, Health, JobAccepted, JobKind, JobProgress, JobResult, JobState, JobStatus,
    ReportRequest, ReportResponse, ResolvedConfig, SweepRequest,
};
use mvcont_core::harness::{
    evaluate_checkpoint, load_records, render_report, run_experiment, run_sweep, DatasetCache, RunConfig,
    DATA_ROOT_ENV, METRICS_FILE,
};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Root for default dataset paths; falls back to `$MVCONT_DATA_ROOT`.
    pub data_root: Option<PathBuf>,
    pub max_jobs: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
            max_jobs: 1,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServerConfig,
    cache: Arc<DatasetCache>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_jobs.max(1)));
        Self {
            inner: Arc::new(Inner {
                config,
                cache: Arc::new(DatasetCache::new()),
                jobs: Mutex::new(BTreeMap::new()),
                permits,
            }),
        }
    }

    /// Shared with in-process callers so datasets load once.
    pub fn cache(&self) -> &Arc<DatasetCache> {
        &self.inner.cache
    }

    fn resolve(&self, request: &ConfigRequest) -> Result<RunConfig, ApiError> {
        request
            .resolve(self.inner.config.data_root.as_deref())
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.inner.jobs.lock().unwrap_or_else(|p| p.into_inner()).get_mut(id) {
            f(job);
        }
    }

    /// Queues `work` and returns its id immediately.
    fn spawn_job<F>(&self, kind: JobKind, config_hash: String, work: F) -> JobAccepted
    where
        F: FnOnce(&dyn Fn(u64, f64)) -> Result<JobResult, String> + Send + 'static,
    {
        let id = uuid::Uuid::new_v4().to_string();
        let status = JobStatus {
            id: id.clone(),
            kind,
            state: JobState::Queued,
            config_hash: config_hash.clone(),
            progress: JobProgress::default(),
            result: None,
            error: None,
        };
        self.inner.jobs.lock().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), status);

        let state = self.clone();
        let job_id = id.clone();
        tokio::spawn(async move {
            let Ok(_permit) = Arc::clone(&state.inner.permits).acquire_owned().await else {
                return;
            };
            state.update(&job_id, |j| j.state = JobState::Running);
            tracing::info!(job = %job_id, ?kind, "job started");
            let worker_state = state.clone();
            let worker_id = job_id.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let progress = |seed: u64, loss: f64| {
                    worker_state.update(&worker_id, |j| {
                        j.progress.steps += 1;
                        j.progress.seed = Some(seed);
                        j.progress.last_loss = Some(loss);
                    })
                };
                work(&progress)
            })
            .await
            .unwrap_or_else(|e| Err(format!("job panicked: {e}")));
            state.update(&job_id, |j| match outcome {
                Ok(result) => {
                    j.state = JobState::Succeeded;
                    j.result = Some(result);
                }
                Err(message) => {
                    j.state = JobState::Failed;
                    j.error = Some(message);
                }
            });
            tracing::info!(job = %job_id, "job finished");
        });
        JobAccepted { id, config_hash }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message,
        }
    }

    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/config/resolve", post(resolve_config))
        .route("/v1/runs", post(submit_run))
        .route("/v1/sweeps", post(submit_sweep))
        .route("/v1/eval", post(submit_eval))
        .route("/v1/report", post(report))
        .route("/v1/jobs", get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn resolve_config(
    State(state): State<AppState>,
    Json(request): Json<ConfigRequest>,
) -> Result<Json<ResolvedConfig>, ApiError> {
    Ok(Json(state.resolve(&request)?.into()))
}

async fn submit_run(
    State(state): State<AppState>,
    Json(request): Json<ConfigRequest>,
) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let config = state.resolve(&request)?;
    let cache = Arc::clone(state.cache());
    let accepted = state.spawn_job(JobKind::Run, config.hash(), move |progress| {
        run_experiment(&config, &cache, &mut |seed, step| progress(seed, step.loss))
            .map(|r| JobResult::Run(Box::new(r)))
            .map_err(|e| e.to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn submit_sweep(
    State(state): State<AppState>,
    Json(request): Json<SweepRequest>,
) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let base = state.resolve(&request.base)?;
    let cache = Arc::clone(state.cache());
    let grid = request.grid;
    let accepted = state.spawn_job(JobKind::Sweep, base.hash(), move |progress| {
        run_sweep(&base, &grid, &cache, &mut |seed, step| progress(seed, step.loss))
            .map(JobResult::Sweep)
            .map_err(|e| e.to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn submit_eval(
    State(state): State<AppState>,
    Json(request): Json<EvalRequest>,
) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let config = state.resolve(&request.config)?;
    for path in [&request.encoder, &request.memory] {
        if !path.is_file() {
            return Err(ApiError::bad_request(format!("checkpoint not found: {}", path.display())));
        }
    }
    let cache = Arc::clone(state.cache());
    let accepted = state.spawn_job(JobKind::Eval, config.hash(), move |_| {
        evaluate_checkpoint(&config, &request.encoder, &request.memory, &cache)
            .map(JobResult::Eval)
            .map_err(|e| e.to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn report(Json(request): Json<ReportRequest>) -> Result<Json<ReportResponse>, ApiError> {
    let path = if request.metrics.is_dir() {
        request.metrics.join(METRICS_FILE)
    } else {
        request.metrics
    };
    let records = tokio::task::spawn_blocking(move || load_records(&path))
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(ReportResponse {
        records: records.len(),
        markdown: render_report(&records, request.style),
    }))
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobStatus>> {
    let jobs = state.inner.jobs.lock().unwrap_or_else(|p| p.into_inner());
    Json(jobs.values().cloned().collect())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, ApiError> {
    let jobs = state.inner.jobs.lock().unwrap_or_else(|p| p.into_inner());
    jobs.get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}
