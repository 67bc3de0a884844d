//! HTTP interface for document upload, runs, review and export.

use std::sync::Arc;

use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reqfusion_core::ingest::{load_document, DocFormat, IngestError, SectionManifest};
use reqfusion_core::pipeline::{Pipeline, PipelineError, RunMetrics, RunSummary};
use reqfusion_core::store::{
    Decision, ExportFormat, RequirementFilter, ReviewStatus, Store, StoreError, StoredRequirement,
};
use reqfusion_core::taxonomy::PegsCategory;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{RwLock, Semaphore};

/// Extraction jobs allowed to run at once.
pub const MAX_CONCURRENT_JOBS: usize = 4;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    pipeline: Arc<Pipeline>,
    token: Arc<str>,
    jobs: Arc<Semaphore>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, store: Store, token: impl Into<String>) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            pipeline: Arc::new(pipeline),
            token: token.into().into(),
            jobs: Arc::new(Semaphore::new(MAX_CONCURRENT_JOBS)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/documents", post(upload_document))
        .route("/runs", get(list_runs).post(start_run))
        .route("/runs/{run_id}", get(get_run))
        .route("/requirements", get(list_requirements))
        .route("/requirements/{req_id}", get(get_requirement))
        .route("/review/{req_id}", post(review))
        .route("/export/{run_id}", get(export))
        .route("/metrics/{run_id}", get(metrics))
        .with_state(state)
}

/// Error response with a JSON `{"error": ...}` body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownRun(_)
            | StoreError::UnknownDocument(_)
            | StoreError::UnknownRequirement(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidTransition { .. } | StoreError::DuplicateRun(_) => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Store(e) => e.into(),
            PipelineError::Ingest(e) => e.into(),
            PipelineError::AllProvidersFailed { .. } => {
                Self::new(StatusCode::BAD_GATEWAY, e.to_string())
            }
            PipelineError::Config(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn authorize(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if t.as_bytes() == state.token.as_bytes() => Ok(()),
        _ => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "missing or invalid bearer token",
        )),
    }
}

/// Sort by confidence ascending, then by requirement id.
pub fn lowest_confidence_first(mut items: Vec<&StoredRequirement>) -> Vec<&StoredRequirement> {
    items.sort_by(|a, b| {
        a.requirement
            .confidence
            .total_cmp(&b.requirement.confidence)
            .then_with(|| a.requirement.req_id.cmp(&b.requirement.req_id))
    });
    items
}

#[derive(Debug, Serialize)]
pub struct DocumentView {
    pub doc_id: String,
    pub title: String,
    pub sections: usize,
}

fn parse_format(s: &str) -> ApiResult<DocFormat> {
    match s.trim().to_ascii_lowercase().as_str() {
        "md" | "markdown" => Ok(DocFormat::Markdown),
        "txt" | "text" | "plain" => Ok(DocFormat::PlainText),
        "pre-extracted" | "pre_extracted" | "preextracted" => Ok(DocFormat::PreExtracted),
        other => Err(ApiError::unprocessable(format!(
            "unknown document format {other:?}"
        ))),
    }
}

async fn upload_document(
    State(state): State<AppState>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<DocumentView>)> {
    authorize(&state, &headers)?;
    let mut body: Option<(Vec<u8>, Option<String>)> = None;
    let mut manifest = None;
    let mut title = None;
    let mut format = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let text = || String::from_utf8_lossy(&bytes).into_owned();
        match name.as_str() {
            "text" | "file" => body = Some((bytes.to_vec(), file_name)),
            "manifest" => manifest = Some(SectionManifest::from_json(&text())?),
            "title" => title = Some(text()),
            "format" => format = Some(parse_format(&text())?),
            _ => {}
        }
    }
    let (bytes, file_name) =
        body.ok_or_else(|| ApiError::unprocessable("missing `text` or `file` field"))?;
    let path = file_name.as_deref().map(std::path::Path::new);
    let format = format.unwrap_or_else(|| path.map_or(DocFormat::PlainText, DocFormat::from_path));
    let title = title
        .or_else(|| {
            path.and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "untitled".to_string());
    let document = load_document(&bytes, format, &title, manifest.as_ref())?;
    let doc_id = state.store.write().await.put_document(&document)?;
    Ok((
        StatusCode::CREATED,
        Json(DocumentView {
            doc_id: doc_id.0,
            title: document.title,
            sections: document.sections.len(),
        }),
    ))
}

#[derive(Debug, Deserialize)]
struct StartRun {
    doc_id: String,
}

async fn start_run(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<StartRun>,
) -> ApiResult<(StatusCode, Json<RunSummary>)> {
    authorize(&state, &headers)?;
    let document = state
        .store
        .read()
        .await
        .document(&req.doc_id)
        .cloned()
        .ok_or_else(|| StoreError::UnknownDocument(req.doc_id.clone()))?;
    let _permit = state
        .jobs
        .acquire()
        .await
        .expect("job semaphore is never closed");
    let extraction = state.pipeline.extract(document).await;
    let summary = state
        .pipeline
        .commit(&mut *state.store.write().await, &extraction)?;
    Ok((StatusCode::CREATED, Json(summary)))
}

fn summary(store: &Store, run_id: &str) -> ApiResult<RunSummary> {
    let run = store.run(run_id)?;
    let title = store
        .document(run.doc_id.as_str())
        .map_or("", |d| d.title.as_str());
    Ok(RunSummary::from_entry(run, title))
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Json<Vec<RunSummary>>> {
    let store = state.store.read().await;
    let runs = store
        .runs()
        .map(|r| summary(&store, &r.run_id))
        .collect::<ApiResult<_>>()?;
    Ok(Json(runs))
}

async fn get_run(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
) -> ApiResult<Json<RunSummary>> {
    Ok(Json(summary(&*state.store.read().await, &run_id)?))
}

#[derive(Debug, Serialize)]
pub struct RequirementView {
    #[serde(flatten)]
    pub stored: StoredRequirement,
    pub excerpt: Option<String>,
}

fn view(store: &Store, r: &StoredRequirement) -> RequirementView {
    RequirementView {
        stored: r.clone(),
        excerpt: store
            .trace_back(&r.requirement.req_id)
            .ok()
            .map(|t| t.excerpt),
    }
}

#[derive(Debug, Default, Deserialize)]
struct RequirementQuery {
    state: Option<String>,
    pegs: Option<String>,
    run: Option<String>,
}

async fn list_requirements(
    State(state): State<AppState>,
    Query(q): Query<RequirementQuery>,
) -> ApiResult<Json<Vec<RequirementView>>> {
    let status = q
        .state
        .as_deref()
        .map(str::parse::<ReviewStatus>)
        .transpose()
        .map_err(ApiError::unprocessable)?;
    let pegs = q
        .pegs
        .as_deref()
        .map(str::parse::<PegsCategory>)
        .transpose()
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let store = state.store.read().await;
    let filter = RequirementFilter {
        run_id: q.run,
        status,
        pegs,
    };
    let items = lowest_confidence_first(store.requirements(&filter))
        .into_iter()
        .map(|r| view(&store, r))
        .collect();
    Ok(Json(items))
}

async fn get_requirement(
    State(state): State<AppState>,
    Path(req_id): Path<String>,
) -> ApiResult<Json<RequirementView>> {
    let store = state.store.read().await;
    let r = store.requirement(&req_id)?;
    Ok(Json(view(&store, r)))
}

#[derive(Debug, Deserialize)]
struct ReviewRequest {
    decision: String,
    reviewer: Option<String>,
    note: Option<String>,
}

async fn review(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(req_id): Path<String>,
    Json(req): Json<ReviewRequest>,
) -> ApiResult<Json<RequirementView>> {
    authorize(&state, &headers)?;
    let decision: Decision = req.decision.parse().map_err(ApiError::unprocessable)?;
    let mut store = state.store.write().await;
    store.decide(
        &req_id,
        decision,
        req.reviewer.as_deref(),
        req.note.as_deref(),
    )?;
    let r = store.requirement(&req_id)?;
    Ok(Json(view(&store, r)))
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("jsonl")
        .parse()
        .map_err(ApiError::unprocessable)?;
    let bytes = state.store.read().await.export_final(&run_id, format)?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], bytes).into_response())
}

async fn metrics(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
) -> ApiResult<Json<RunMetrics>> {
    let store = state.store.read().await;
    Ok(Json(RunMetrics::from_entry(store.run(&run_id)?)))
}
