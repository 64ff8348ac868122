//! Session API behind the web UI: detect a prompt's attribute table, edit
//! it, and generate images from the edited weights in the background.

mod table;

use std::collections::HashMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use fairguide_core::manifest::{read_entries, FusionSource, MANIFEST_FILE};
use fairguide_core::resample::TargetSpec;
use fairguide_core::{AttributeAssignment, AttributeCatalog, PromptText};
use fairguide_gen::{
    generate_batch, plan_run, BackendProfile, BatchOptions, BatchSpec, Clock, Fusion, ImageBackend, MockBackend,
    Progress,
};
use fairguide_llm::{LlmClient, LlmError};
use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use uuid::Uuid;

pub use table::{normalize_table, table_distribution, uniform_table, TableErrors, WeightTable};

/// Largest batch one request may ask for.
pub const MAX_JOB_IMAGES: usize = 10_000;

/// Concurrent generation jobs across all sessions.
const JOB_SLOTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: Uuid,
    pub prompt: String,
    pub catalog: AttributeCatalog,
    pub weights: WeightTable,
    pub target: String,
    pub last_job: Option<Uuid>,
    #[serde(default)]
    pub jobs: Vec<Uuid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProgress {
    pub completed: usize,
    pub requested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: Uuid,
    pub session_id: Uuid,
    pub state: JobState,
    pub progress: JobProgress,
    pub backend: String,
    pub run_id: String,
    /// URL of the run's manifest.
    pub manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobStatus {
    fn active(&self) -> bool {
        matches!(self.state, JobState::Queued | JobState::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub index: usize,
    pub image_url: String,
    pub fused_prompt: String,
    pub assignment: AttributeAssignment,
    pub fusion_source: FusionSource,
    pub seed: u64,
}

pub struct ServiceConfig {
    pub detector: LlmClient,
    pub fusion: Fusion,
    pub http_backend: Option<Arc<dyn ImageBackend>>,
    pub profile: BackendProfile,
    pub runs_root: PathBuf,
    pub parallelism: usize,
    pub state_file: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
}

pub struct Inner {
    config: ServiceConfig,
    sessions: Mutex<IndexMap<Uuid, SessionState>>,
    jobs: Mutex<HashMap<Uuid, JobStatus>>,
    slots: Arc<Semaphore>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&config.runs_root)?;
        let mut sessions = IndexMap::new();
        if let Some(path) = config.state_file.as_ref().filter(|p| p.is_file()) {
            let saved: Vec<SessionState> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            sessions.extend(saved.into_iter().map(|s| (s.session_id, s)));
        }
        Ok(AppState(Arc::new(Inner {
            config,
            sessions: Mutex::new(sessions),
            jobs: Mutex::new(HashMap::new()),
            slots: Arc::new(Semaphore::new(JOB_SLOTS)),
        })))
    }

    fn persist(&self, sessions: &IndexMap<Uuid, SessionState>) {
        let Some(path) = &self.0.config.state_file else { return };
        let snapshot: Vec<&SessionState> = sessions.values().collect();
        let write = || -> std::io::Result<()> {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec_pretty(&snapshot)?)?;
            std::fs::rename(&tmp, path)
        };
        if let Err(e) = write() {
            tracing::error!("could not write session snapshot {}: {e}", path.display());
        }
    }

    fn active_job(&self, session: &SessionState) -> Option<Uuid> {
        let jobs = self.0.jobs.lock();
        session.last_job.filter(|id| jobs.get(id).is_some_and(JobStatus::active))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/table", put(put_table))
        .route("/api/sessions/{id}/generate", post(start_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/results", get(job_results))
        .route("/runs/{run}/{file}", get(run_file))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": message.into() }) }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match &e {
            LlmError::DetectionFailed { attempts, reason, last_raw } => ApiError {
                status: StatusCode::BAD_GATEWAY,
                body: json!({
                    "error": "detection failed",
                    "attempts": attempts,
                    "reason": reason.to_string(),
                    "last_raw": last_raw,
                }),
            },
            LlmError::Transport(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn unprocessable(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
}

#[derive(Deserialize)]
struct CreateSession {
    prompt: String,
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionState>)> {
    let prompt = PromptText::new(req.prompt).map_err(|e| unprocessable(e.to_string()))?;
    let detection = state.0.config.detector.detect_biases(&prompt).await?;
    let session = SessionState {
        session_id: Uuid::new_v4(),
        prompt: prompt.as_str().to_string(),
        weights: uniform_table(&detection.catalog),
        catalog: detection.catalog,
        target: "custom".into(),
        last_job: None,
        jobs: Vec::new(),
    };
    let mut sessions = state.0.sessions.lock();
    sessions.insert(session.session_id, session.clone());
    state.persist(&sessions);
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<SessionState>> {
    state.0.sessions.lock().get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found("session"))
}

#[derive(Deserialize)]
struct TableUpdate {
    catalog: AttributeCatalog,
    #[serde(default)]
    weights: WeightTable,
}

async fn put_table(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(update): Json<TableUpdate>,
) -> ApiResult<Json<SessionState>> {
    let mut sessions = state.0.sessions.lock();
    let session = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("session"))?;
    if let Some(job) = state.active_job(session) {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({"error": "a generation job is running for this session", "job_id": job}),
        });
    }
    let weights = normalize_table(&update.catalog, &update.weights).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: json!({
            "error": "invalid table",
            "violations": e.violations,
            "messages": e.violations.iter().map(ToString::to_string).chain(e.weight_errors.iter().cloned()).collect::<Vec<_>>(),
            "weight_errors": e.weight_errors,
        }),
    })?;
    session.catalog = update.catalog;
    session.weights = weights;
    let out = session.clone();
    state.persist(&sessions);
    Ok(Json(out))
}

#[derive(Deserialize)]
struct GenerateBody {
    n: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    backend: Option<String>,
}

async fn start_job(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(body): Json<GenerateBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    if body.n == 0 || body.n > MAX_JOB_IMAGES {
        return Err(unprocessable(format!("n must be between 1 and {MAX_JOB_IMAGES}")));
    }
    let backend: Arc<dyn ImageBackend> = match body.backend.as_deref().unwrap_or("mock") {
        "mock" => Arc::new(MockBackend::new()),
        "http" => state
            .0
            .config
            .http_backend
            .clone()
            .ok_or_else(|| unprocessable("no HTTP backend configured"))?,
        other => return Err(unprocessable(format!("unknown backend `{other}` (mock or http)"))),
    };

    let mut sessions = state.0.sessions.lock();
    let session = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("session"))?;
    if let Some(job) = state.active_job(session) {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({"error": "a generation job is already running for this session", "job_id": job}),
        });
    }
    let spec = BatchSpec {
        prompt: PromptText::new(session.prompt.clone()).map_err(|e| unprocessable(e.to_string()))?,
        catalog: session.catalog.clone(),
        target: TargetSpec::Custom { distribution: table_distribution(&session.weights) },
        n: body.n,
        seed: body.seed.unwrap_or(0),
        profile: state.0.config.profile.clone(),
    };
    let (config, _) = plan_run(&spec, backend.id(), &state.0.config.fusion).map_err(|e| unprocessable(e.to_string()))?;
    let run_id = config.run_id();
    let job_id = Uuid::new_v4();
    let status = JobStatus {
        job_id,
        session_id: id,
        state: JobState::Queued,
        progress: JobProgress { completed: 0, requested: body.n },
        backend: backend.id().to_string(),
        manifest: format!("/runs/{run_id}/{MANIFEST_FILE}"),
        run_id: run_id.clone(),
        error: None,
    };
    state.0.jobs.lock().insert(job_id, status);
    session.last_job = Some(job_id);
    session.jobs.push(job_id);
    state.persist(&sessions);
    drop(sessions);

    tokio::spawn(run_job(state.clone(), job_id, spec, backend));
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job_id, "run_id": run_id}))))
}

async fn run_job(state: AppState, job_id: Uuid, spec: BatchSpec, backend: Arc<dyn ImageBackend>) {
    let _permit = state.0.slots.clone().acquire_owned().await.expect("semaphore is never closed");
    let update = |f: &dyn Fn(&mut JobStatus)| {
        if let Some(job) = state.0.jobs.lock().get_mut(&job_id) {
            f(job);
        }
    };
    update(&|j| j.state = JobState::Running);
    let progress_state = state.clone();
    let options = BatchOptions {
        parallelism: state.0.config.parallelism,
        clock: state.0.config.clock.clone(),
        progress: Some(Arc::new(move |p: Progress| {
            if let Some(job) = progress_state.0.jobs.lock().get_mut(&job_id) {
                job.progress.completed = job.progress.completed.max(p.completed);
            }
        })),
    };
    let cfg = &state.0.config;
    match generate_batch(&spec, backend, &cfg.fusion, &cfg.runs_root, &options).await {
        Ok(out) => update(&|j| {
            j.state = JobState::Done;
            j.progress.completed = out.manifest.entries.len();
        }),
        Err(e) => {
            tracing::error!(%job_id, "generation failed: {e}");
            let msg = e.to_string();
            update(&|j| {
                j.state = JobState::Failed;
                j.error = Some(msg.clone());
            });
        }
    }
}

async fn get_job(State(state): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<JobStatus>> {
    state.0.jobs.lock().get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found("job"))
}

async fn job_results(State(state): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<Vec<ResultItem>>> {
    let job = state.0.jobs.lock().get(&id).cloned().ok_or_else(|| ApiError::not_found("job"))?;
    let path = state.0.config.runs_root.join(&job.run_id).join(MANIFEST_FILE);
    let mut entries =
        read_entries(&path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    entries.sort_by_key(|e| e.index);
    entries.dedup_by_key(|e| e.index);
    Ok(Json(
        entries
            .into_iter()
            .map(|e| ResultItem {
                index: e.index,
                image_url: format!("/runs/{}/{}", job.run_id, e.image),
                fused_prompt: e.fused_prompt,
                assignment: e.assignment,
                fusion_source: e.fusion_source,
                seed: e.seed,
            })
            .collect(),
    ))
}

fn safe_segment(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

async fn run_file(State(state): State<AppState>, Path((run, file)): Path<(String, String)>) -> ApiResult<Response> {
    if !safe_segment(&run) || !safe_segment(&file) {
        return Err(ApiError::not_found("file"));
    }
    let path = state.0.config.runs_root.join(&run).join(&file);
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found("file"))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("jsonl") => "application/x-ndjson",
        _ => "application/octet-stream",
    }
}
