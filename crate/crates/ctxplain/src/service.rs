//! HTTP+JSON API: corpus, oracles, sessions and asynchronous analysis jobs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctxplain_core::oracle::evaluate;
use ctxplain_core::retrieval::{retrieve_context, Bm25Params, Index};
use ctxplain_core::{
    AnswerRecord, Combination, ContextSequence, ExplainError, Perturbation, Permutation, Query, SourceDocument,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    progress_total, result_id, run_analysis, AnalysisError, AnalysisRequest, CounterfactualRequest, ErrorBody,
    InsightRequest, ResultPayload,
};
use crate::config::Config;
use crate::corpus::{index_jsonl, save_index, CorpusError};
use crate::demo::Demo;
use crate::gateway::{Gateway, Limiter, Tracked};
use crate::registry::{OracleRegistration, OracleSpec, Registry};
use crate::store::{Store, StoreError, Table};

/// Oracle id under which a configured remote endpoint is registered.
pub const DEFAULT_ORACLE_ID: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Answer for the full retrieved context.
    pub full: AnswerRecord,
    /// Answer with no sources at all.
    pub empty: AnswerRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub query: Query,
    pub context: ContextSequence,
    pub oracle_id: String,
    pub top_k: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub baselines: Baselines,
    pub results: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub query: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    pub oracle_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub evaluated: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub session_id: String,
    pub state: JobState,
    pub progress: Progress,
    /// Remote oracle calls this job caused (cache hits excluded).
    pub remote_calls: u64,
    pub result_ref: Option<String>,
    pub error: Option<ErrorBody>,
}

struct LiveJob {
    status: JobStatus,
    evaluated: Arc<AtomicU64>,
    remote: Arc<AtomicU64>,
}

impl LiveJob {
    fn snapshot(&self) -> JobStatus {
        let mut status = self.status.clone();
        status.progress.evaluated = self.evaluated.load(Ordering::SeqCst).min(status.progress.total);
        status.remote_calls = self.remote.load(Ordering::SeqCst);
        status
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                details: Value::Null,
            },
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.body.details = details;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, &format!("{what}NotFound"), format!("no {} with id {id}", what.to_lowercase()))
    }

    fn validation(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", message)
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let status = match e.code() {
            "OracleUnavailable" | "OracleMalformedResponse" => StatusCode::BAD_GATEWAY,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError { status, body: e.body() }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        AnalysisError::from(e).into()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", e.to_string())
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Retrieval(r) => ExplainError::from(r).into(),
            CorpusError::Parse { line, ref message } => {
                ApiError::validation(e.to_string()).with_details(json!({"line": line, "error": message}))
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IoError", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

pub struct AppState {
    config: Config,
    store: Store,
    registry: Registry,
    index: RwLock<Option<Arc<Index>>>,
    jobs: Mutex<HashMap<String, LiveJob>>,
    session_writes: Mutex<()>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Opens the configured store, restores registered oracles and loads the
    /// index file if one exists.
    pub fn open(config: Config) -> anyhow::Result<Self> {
        let store = match &config.store_path {
            Some(path) => Store::open(path)?,
            None => Store::in_memory()?,
        };
        let state = Self::with_store(config, store);
        state.registry.restore()?;
        if let Some(http) = state.config.http_oracle() {
            state.registry.register_transient(DEFAULT_ORACLE_ID, OracleSpec::Http(http));
        }
        if let Some(path) = &state.config.index_path {
            if path.exists() {
                state.set_index(crate::corpus::load_index(path)?);
            }
        }
        Ok(state)
    }

    pub fn with_store(config: Config, store: Store) -> Self {
        let limiter = Arc::new(Limiter::new(config.concurrency));
        AppState {
            registry: Registry::new(store.clone(), limiter),
            config,
            store,
            index: RwLock::new(None),
            jobs: Mutex::new(HashMap::new()),
            session_writes: Mutex::new(()),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn set_index(&self, index: Index) {
        *self.index.write().unwrap() = Some(Arc::new(index));
    }

    /// Installs a demo's corpus and registers its mock oracle under the
    /// demo's name.
    pub fn load_demo(&self, demo: Demo) -> anyhow::Result<()> {
        self.set_index(demo.index()?);
        self.registry
            .register_transient(demo.name, OracleSpec::Mock { fixture: demo.oracle() });
        Ok(())
    }

    fn gateway(&self, oracle_id: &str) -> ApiResult<Arc<Gateway>> {
        self.registry
            .get(oracle_id)
            .ok_or_else(|| ApiError::validation(format!("unknown oracle_id {oracle_id:?}")))
    }

    fn session(&self, id: &str) -> ApiResult<Session> {
        self.store
            .get(Table::Sessions, id)?
            .ok_or_else(|| ApiError::not_found("Session", id))
    }

    fn create_session(&self, request: CreateSession) -> ApiResult<Session> {
        let gateway = self.gateway(&request.oracle_id)?;
        let index = self
            .index
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "NoIndex", "no corpus has been ingested"))?;
        let top_k = request.top_k.unwrap_or(self.config.top_k);
        let query = Query::new(request.query).map_err(ExplainError::from)?;
        let params = Bm25Params::with_top_k(top_k);
        params.validate().map_err(ExplainError::from)?;
        let context = retrieve_context(&index, &query, &params)?;
        let baselines = compute_baselines(&context, gateway.as_ref()).map_err(AnalysisError::from)?;
        let session = Session {
            session_id: new_id("s"),
            query,
            context,
            oracle_id: request.oracle_id,
            top_k,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            baselines,
            results: Vec::new(),
        };
        self.store.put(Table::Sessions, &session.session_id, &session)?;
        Ok(session)
    }

    fn job(&self, id: &str) -> ApiResult<JobStatus> {
        if let Some(live) = self.jobs.lock().unwrap().get(id) {
            return Ok(live.snapshot());
        }
        self.store
            .get(Table::Jobs, id)?
            .ok_or_else(|| ApiError::not_found("Job", id))
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) -> JobStatus {
        let mut jobs = self.jobs.lock().unwrap();
        let live = jobs.get_mut(id).expect("job registered before it runs");
        f(&mut live.status);
        let snapshot = live.snapshot();
        if let Err(e) = self.store.put(Table::Jobs, id, &snapshot) {
            tracing::error!(job = id, "failed to persist job: {e}");
        }
        snapshot
    }

    fn submit(self: &Arc<Self>, session: Session, request: AnalysisRequest) -> ApiResult<JobStatus> {
        let gateway = self.gateway(&session.oracle_id)?;
        let job_id = new_id("j");
        let evaluated = Arc::new(AtomicU64::new(0));
        let remote = Arc::new(AtomicU64::new(0));
        let status = JobStatus {
            job_id: job_id.clone(),
            session_id: session.session_id.clone(),
            state: JobState::Pending,
            progress: Progress {
                evaluated: 0,
                total: progress_total(session.context.k(), &request),
            },
            remote_calls: 0,
            result_ref: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(
            job_id.clone(),
            LiveJob {
                status: status.clone(),
                evaluated: evaluated.clone(),
                remote: remote.clone(),
            },
        );
        self.store.put(Table::Jobs, &job_id, &status)?;

        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            state.update_job(&job_id, |s| s.state = JobState::Running);
            let tracked = Tracked::new(&gateway, evaluated, remote);
            let rid = result_id(&session.context, gateway.namespace(), &request);
            let outcome = run_analysis(&session.context, &tracked, &request, &state.config.limits())
                .map_err(|e| e.body())
                .and_then(|payload| state.record_result(&session.session_id, &rid, &payload).map_err(|e| e.body));
            state.update_job(&job_id, |s| match outcome {
                Ok(()) => {
                    s.state = JobState::Done;
                    s.result_ref = Some(rid);
                }
                Err(body) => {
                    s.state = JobState::Failed;
                    s.error = Some(body);
                }
            });
        });
        Ok(status)
    }

    fn record_result(&self, session_id: &str, rid: &str, payload: &ResultPayload) -> ApiResult<()> {
        self.store.put(Table::Results, rid, payload)?;
        let _guard = self.session_writes.lock().unwrap();
        let mut session = self.session(session_id)?;
        if !session.results.iter().any(|r| r == rid) {
            session.results.push(rid.to_string());
            self.store.put(Table::Sessions, session_id, &session)?;
        }
        Ok(())
    }
}

/// Full-context and empty-context answers for a session.
pub fn compute_baselines(
    context: &ContextSequence,
    oracle: &dyn ctxplain_core::Oracle,
) -> Result<Baselines, ctxplain_core::OracleError> {
    let all: Vec<&SourceDocument> = context.sources().iter().collect();
    let full = evaluate(
        oracle,
        context.query(),
        &all,
        Perturbation::Permutation(Permutation::identity(context.k())),
    )?;
    let empty = evaluate(oracle, context.query(), &[], Perturbation::Combination(Combination::empty()))?;
    Ok(Baselines { full, empty })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

async fn post_corpus(State(state): State<SharedState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let response = blocking(move || {
        let index = index_jsonl(body.as_ref())?;
        if let Some(path) = &state.config.index_path {
            save_index(&index, path)?;
        }
        let summary = json!({"documents": index.len(), "avg_doc_len": index.avg_doc_len()});
        state.set_index(index);
        Ok(summary)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(response)))
}

async fn post_session(State(state): State<SharedState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: CreateSession = parse(&body)?;
    let session = blocking(move || state.create_session(request)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(state.session(&id)?))
}

async fn post_insights(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let request: InsightRequest = parse(&body)?;
    let session = state.session(&id)?;
    let status = state.submit(session, AnalysisRequest::Insight(request))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn post_counterfactuals(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let request: CounterfactualRequest = parse(&body)?;
    let session = state.session(&id)?;
    let status = state.submit(session, AnalysisRequest::Counterfactual(request))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_job(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    Ok(Json(state.job(&id)?))
}

async fn get_result(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Response> {
    // stored bytes are served verbatim so repeated reads are byte-identical
    let bytes = state
        .store
        .get_raw(Table::Results, &id)?
        .ok_or_else(|| ApiError::not_found("Result", &id))?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_oracles(State(state): State<SharedState>) -> impl IntoResponse {
    Json(state.registry.list())
}

async fn post_oracle(State(state): State<SharedState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let registration: OracleRegistration = parse(&body)?;
    if registration.id.trim().is_empty() {
        return Err(ApiError::validation("oracle id must not be empty"));
    }
    let id = registration.id.clone();
    state.registry.register(registration)?;
    let info = state.registry.list().into_iter().find(|o| o.id == id);
    Ok((StatusCode::CREATED, Json(info)))
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/corpus", post(post_corpus))
        .route("/sessions", post(post_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/insights", post(post_insights))
        .route("/sessions/:id/counterfactuals", post(post_counterfactuals))
        .route("/jobs/:id", get(get_job))
        .route("/results/:id", get(get_result))
        .route("/oracles", get(get_oracles).post(post_oracle))
        .with_state(state)
}

/// Serves until the future `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: SharedState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
