//! HTTP/JSON service over a data root.
//!
//! | route | |
//! |---|---|
//! | `GET /datasets` | dataset summaries |
//! | `GET /datasets/{id}/samples/{n}` | one sample |
//! | `GET /models` | checkpoint ids |
//! | `GET /explain/{model}/{sample}?domain=&dataset=` | attribution export |
//! | `POST /masks?dataset=` | store a mask file, returns its id |
//! | `GET /masks/{id}` | the stored bytes |
//! | `POST /revise` | queue a revision job |
//! | `GET /jobs/{id}?wait=` | job status, long-polling up to `wait` seconds |
//! | `GET /jobs/{id}/explain/{sample}?domain=` | attribution of the revised model |

use std::collections::HashMap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{mpsc, watch};
use tsxil_core::attribution::IgConfig;
use tsxil_core::data::SplitTag;
use tsxil_core::decoys::DecoyKind;
use tsxil_core::feedback::Feedback;
use tsxil_core::losses::TaskKind;
use tsxil_core::train::EpochLog;

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, FieldError};
use crate::export::{explain_sample, AttributionExport};
use crate::masks::{Domain, MaskFile};
use crate::revise::{revise, ReviseRequest, RevisionMetrics};
use crate::store::Store;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Jobs running at once; one keeps results independent of timing.
    pub workers: usize,
    /// Integration steps of served explanations and mask-mass metrics.
    pub explain_steps: usize,
    /// Upper bound of the long-polling wait.
    pub max_wait: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { workers: 1, explain_steps: 32, max_wait: Duration::from_secs(30) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    pub epochs: usize,
    /// Per-epoch losses so far.
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    pub request: ReviseRequest,
    pub dataset: String,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<RevisionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<RevisionMetrics>,
    /// Model id of the revised checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    /// Set when there was nothing to revise and the base model was kept.
    #[serde(default)]
    pub noop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    id: String,
    status: watch::Sender<JobStatus>,
}

struct StoredMasks {
    dataset: String,
}

struct Inner {
    store: Store,
    config: ServiceConfig,
    datasets: Mutex<HashMap<String, Arc<Dataset>>>,
    masks: RwLock<HashMap<String, StoredMasks>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    next_mask: AtomicU64,
    next_job: AtomicU64,
    queue: mpsc::UnboundedSender<Arc<Job>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

/// JSON error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn conflict(message: impl Into<String>) -> Self {
        Self { status: StatusCode::CONFLICT, message: message.into(), fields: Vec::new() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } | Error::Checkpoint(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let fields = match &e {
            Error::Validation(f) => f.clone(),
            _ => Vec::new(),
        };
        Self { status, message: e.to_string(), fields }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::error::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| Error::Invalid(format!("task failed: {e}")))?.map_err(ApiError::from)
}

fn next_free(ids: &[String], prefix: &str) -> u64 {
    ids.iter().filter_map(|id| id.strip_prefix(prefix)?.parse::<u64>().ok()).max().map_or(1, |n| n + 1)
}

impl AppState {
    /// Builds the state and starts the job workers; call inside a Tokio
    /// runtime.
    pub fn new(store: Store, config: ServiceConfig) -> crate::error::Result<Self> {
        let (tx, rx) = mpsc::unbounded_channel::<Arc<Job>>();
        let next_mask = next_free(&store.mask_ids()?, "m");
        let next_job = next_free(&store.model_ids()?, "job-");
        let workers = config.workers.max(1);
        let inner = Arc::new(Inner {
            store,
            config,
            datasets: Mutex::new(HashMap::new()),
            masks: RwLock::new(HashMap::new()),
            jobs: RwLock::new(HashMap::new()),
            next_mask: AtomicU64::new(next_mask),
            next_job: AtomicU64::new(next_job),
            queue: tx,
        });
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers {
            let (inner, rx) = (inner.clone(), rx.clone());
            tokio::spawn(async move {
                loop {
                    let job = match rx.lock().await.recv().await {
                        Some(job) => job,
                        None => break,
                    };
                    let inner = inner.clone();
                    let worker_job = job.clone();
                    let result = tokio::task::spawn_blocking(move || run_job(&inner, &worker_job)).await;
                    let error = match result {
                        Ok(Ok(())) => None,
                        Ok(Err(e)) => Some(e.to_string()),
                        Err(e) => Some(format!("job panicked: {e}")),
                    };
                    if let Some(error) = error {
                        tracing::warn!(job = %job.id, %error, "revision failed");
                        job.status.send_modify(|s| {
                            s.state = JobState::Failed;
                            s.error = Some(error);
                        });
                    }
                }
            });
        }
        Ok(Self(inner))
    }

    fn ig(&self) -> IgConfig {
        IgConfig::with_steps(self.0.config.explain_steps)
    }

    fn dataset(&self, id: &str) -> crate::error::Result<Arc<Dataset>> {
        self.0.dataset(id)
    }
}

impl Inner {
    fn dataset(&self, id: &str) -> crate::error::Result<Arc<Dataset>> {
        if let Some(d) = self.datasets.lock().expect("dataset cache lock").get(id) {
            return Ok(d.clone());
        }
        let d = Arc::new(self.store.load_dataset(id)?);
        self.datasets.lock().expect("dataset cache lock").insert(id.to_string(), d.clone());
        Ok(d)
    }
}

/// Dataset id a model refers to: explicit, else the name in its header.
fn dataset_of(checkpoint: &Checkpoint, explicit: Option<&str>) -> crate::error::Result<String> {
    explicit
        .map(str::to_string)
        .or_else(|| checkpoint.header.dataset.as_ref().map(|h| h.name.clone()))
        .ok_or_else(|| Error::Invalid("the model records no dataset; pass one explicitly".into()))
}

fn run_job(inner: &Inner, job: &Job) -> crate::error::Result<()> {
    let (request, dataset_id) = {
        let s = job.status.borrow();
        (s.request.clone(), s.dataset.clone())
    };
    let base = inner.store.load_model(&request.model)?;
    let dataset = inner.dataset(&dataset_id)?;
    let cfg = request.config(dataset.task());
    job.status.send_modify(|s| {
        s.state = JobState::Running;
        s.progress.epochs = cfg.epochs;
    });
    let feedback = match &request.masks {
        Some(id) => MaskFile::parse(&inner.store.load_masks(id)?)?.to_feedback(dataset.len(), dataset.input_len())?,
        None => Feedback::none(),
    };
    let measure = IgConfig::with_steps(inner.config.explain_steps);
    let revision = revise(&base.model, request.init, &dataset, &feedback, &cfg, &measure, &mut |entry| {
        job.status.send_modify(|s| {
            s.progress.epoch = entry.epoch;
            s.progress.log.push(entry.clone());
        });
        ControlFlow::Continue(())
    })?;
    let checkpoint = Checkpoint::new(revision.model, Some(dataset.header().clone()));
    inner.store.save_model(&job.id, &checkpoint)?;
    let hash = checkpoint.hash();
    job.status.send_modify(|s| {
        s.state = JobState::Done;
        s.before = Some(revision.before);
        s.after = Some(revision.after);
        s.noop = revision.noop;
        s.result_model = Some(job.id.clone());
        s.checkpoint_sha256 = Some(hash);
    });
    Ok(())
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    id: String,
    name: String,
    task: TaskKind,
    samples: usize,
    len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    train: usize,
    val: usize,
    test: usize,
    decoys: Vec<DecoyKind>,
}

fn summary(id: &str, d: &Dataset) -> DatasetSummary {
    let h = d.header();
    DatasetSummary {
        id: id.to_string(),
        name: h.name.clone(),
        task: d.task(),
        samples: d.len(),
        len: h.len,
        horizon: h.horizon,
        num_classes: h.num_classes,
        train: d.indices(SplitTag::Train).len(),
        val: d.indices(SplitTag::Val).len(),
        test: d.indices(SplitTag::Test).len(),
        decoys: h.decoys.iter().map(|r| r.kind).collect(),
    }
}

async fn list_datasets(State(state): State<AppState>) -> ApiResult<Json<Vec<DatasetSummary>>> {
    let s = state.clone();
    let out = blocking(move || {
        s.0.store.dataset_ids()?.iter().map(|id| Ok::<_, Error>(summary(id, &*s.dataset(id)?))).collect::<crate::error::Result<Vec<_>>>()
    })
    .await?;
    Ok(Json(out))
}

async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetSummary>> {
    let d = blocking({
        let (s, id) = (state.clone(), id.clone());
        move || s.dataset(&id)
    })
    .await?;
    Ok(Json(summary(&id, &d)))
}

async fn get_sample(State(state): State<AppState>, Path((id, n)): Path<(String, usize)>) -> ApiResult<Response> {
    let d = blocking(move || state.dataset(&id)).await?;
    Ok(Json(d.sample(n)?).into_response())
}

async fn list_models(State(state): State<AppState>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.0.store.model_ids()?))
}

#[derive(Debug, Deserialize)]
struct ExplainQuery {
    domain: Option<String>,
    dataset: Option<String>,
}

fn domain(q: Option<&str>) -> crate::error::Result<Domain> {
    q.map_or(Ok(Domain::Time), str::parse)
}

fn explain_with(state: &AppState, model: &str, dataset: Option<&str>, sample: usize, domain: Domain) -> crate::error::Result<AttributionExport> {
    let ckpt = state.0.store.load_model(model)?;
    let d = state.dataset(&dataset_of(&ckpt, dataset)?)?;
    if sample >= d.len() {
        return Err(Error::NotFound(format!("sample {sample}")));
    }
    explain_sample(&ckpt.model, d.input(sample), sample, domain, &state.ig())
}

async fn explain(
    State(state): State<AppState>,
    Path((model, sample)): Path<(String, usize)>,
    Query(q): Query<ExplainQuery>,
) -> ApiResult<Json<AttributionExport>> {
    let domain = domain(q.domain.as_deref())?;
    Ok(Json(blocking(move || explain_with(&state, &model, q.dataset.as_deref(), sample, domain)).await?))
}

#[derive(Debug, Deserialize)]
struct MaskQuery {
    dataset: String,
}

/// Feedback may only land on training samples.
fn guard_training(file: &MaskFile, d: &Dataset) -> crate::error::Result<()> {
    let errors: Vec<FieldError> = file
        .0
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.broadcast && e.sample_id < d.len() && d.tag(e.sample_id) != SplitTag::Train)
        .map(|(i, e)| FieldError::new(format!("[{i}].sample_id"), format!("sample {} is not in the training split", e.sample_id)))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errors))
    }
}

async fn post_masks(State(state): State<AppState>, Query(q): Query<MaskQuery>, body: Bytes) -> ApiResult<Response> {
    let file = MaskFile::parse(&body)?;
    let s = state.clone();
    let dataset_id = q.dataset.clone();
    let d = blocking(move || s.dataset(&dataset_id)).await?;
    file.validate(d.len(), d.input_len())?;
    guard_training(&file, &d)?;
    let id = format!("m{}", state.0.next_mask.fetch_add(1, Ordering::SeqCst));
    state.0.store.save_masks(&id, &body)?;
    state.0.masks.write().expect("mask index lock").insert(id.clone(), StoredMasks { dataset: q.dataset.clone() });
    Ok(Json(json!({ "id": id, "dataset": q.dataset, "entries": file.0.len() })).into_response())
}

async fn get_masks(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = state.0.store.load_masks(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn post_revise(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let request: ReviseRequest = serde_json::from_slice(&body).map_err(Error::from)?;
    let s = state.clone();
    let req = request.clone();
    let dataset = blocking(move || {
        let ckpt = s.0.store.load_model(&req.model)?;
        let dataset = dataset_of(&ckpt, req.dataset.as_deref())?;
        let d = s.dataset(&dataset)?;
        if let Some(m) = &req.masks {
            s.0.store.load_masks(m)?;
            let recorded = s.0.masks.read().expect("mask index lock").get(m).map(|m| m.dataset.clone());
            if recorded.is_some_and(|r| r != dataset) {
                return Err(Error::Invalid(format!("mask file {m} was submitted for another dataset")));
            }
        }
        req.config(d.task()).validate()?;
        Ok(dataset)
    })
    .await?;
    let id = format!("job-{}", state.0.next_job.fetch_add(1, Ordering::SeqCst));
    let status = JobStatus {
        id: id.clone(),
        state: JobState::Queued,
        request,
        dataset,
        progress: Progress { epoch: 0, epochs: 0, log: Vec::new() },
        before: None,
        after: None,
        result_model: None,
        checkpoint_sha256: None,
        noop: false,
        error: None,
    };
    let job = Arc::new(Job { id: id.clone(), status: watch::Sender::new(status) });
    state.0.jobs.write().expect("job table lock").insert(id.clone(), job.clone());
    state.0.queue.send(job).map_err(|_| Error::Invalid("job queue is closed".into()))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

fn job(state: &AppState, id: &str) -> ApiResult<Arc<Job>> {
    state.0.jobs.read().expect("job table lock").get(id).cloned().ok_or_else(|| Error::NotFound(format!("job {id:?}")).into())
}

#[derive(Debug, Deserialize)]
struct JobQuery {
    /// Seconds to wait for a change while the job is unfinished.
    wait: Option<f64>,
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<JobQuery>) -> ApiResult<Json<JobStatus>> {
    let job = job(&state, &id)?;
    let mut rx = job.status.subscribe();
    let finished = |s: &JobStatus| matches!(s.state, JobState::Done | JobState::Failed);
    if let Some(wait) = q.wait.filter(|w| *w > 0.0 && w.is_finite()) {
        if !finished(&rx.borrow_and_update()) {
            let wait = Duration::from_secs_f64(wait).min(state.0.config.max_wait);
            let _ = tokio::time::timeout(wait, rx.changed()).await;
        }
    }
    let snapshot = rx.borrow().clone();
    Ok(Json(snapshot))
}

async fn job_explain(
    State(state): State<AppState>,
    Path((id, sample)): Path<(String, usize)>,
    Query(q): Query<ExplainQuery>,
) -> ApiResult<Json<AttributionExport>> {
    let job = job(&state, &id)?;
    let (model, dataset) = {
        let s = job.status.borrow();
        match (&s.state, &s.result_model) {
            (JobState::Done, Some(m)) => (m.clone(), s.dataset.clone()),
            _ => return Err(ApiError::conflict(format!("job {id} has not finished"))),
        }
    };
    let domain = domain(q.domain.as_deref())?;
    Ok(Json(blocking(move || explain_with(&state, &model, Some(&dataset), sample, domain)).await?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/samples/{n}", get(get_sample))
        .route("/models", get(list_models))
        .route("/explain/{model}/{sample}", get(explain))
        .route("/masks", post(post_masks))
        .route("/masks/{id}", get(get_masks))
        .route("/revise", post(post_revise))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/explain/{sample}", get(job_explain))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(store: Store, config: ServiceConfig, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let app = router(AppState::new(store, config)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
