//! HTTP API over [`StudyService`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use synth_eval_core::{load_manifest, Manifest, Origin, ReportFormat};

use crate::error::StudyError;
use crate::service::StudyService;

pub struct ApiError(StudyError);

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &StudyError) -> StatusCode {
    match e {
        StudyError::UnknownStudy(_) | StudyError::UnknownSession(_) | StudyError::UnknownItem(_) => {
            StatusCode::NOT_FOUND
        }
        StudyError::Closed(_)
        | StudyError::StillOpen(_)
        | StudyError::DuplicateResponse { .. }
        | StudyError::OutOfOrder { .. }
        | StudyError::SessionComplete(_)
        | StudyError::NoCompletedSessions(_) => StatusCode::CONFLICT,
        StudyError::InsufficientRecords { .. }
        | StudyError::DuplicateItemId(_)
        | StudyError::InvalidRequest(_)
        | StudyError::InvalidImport(_)
        | StudyError::Manifest(_) => StatusCode::UNPROCESSABLE_ENTITY,
        StudyError::Inconsistent(_) | StudyError::Log(_) | StudyError::Stats(_) | StudyError::Io { .. } => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let mut body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        if let StudyError::DuplicateResponse { position, .. } = &self.0 {
            body["position"] = json!(position);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a blocking service call (file I/O, fsync) off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, StudyError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .expect("service call panicked")
        .map_err(ApiError)
}

/// A manifest given either as a path readable by the server or inline.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ManifestSource {
    Path(PathBuf),
    Inline(Manifest),
}

impl ManifestSource {
    fn load(self) -> Result<Manifest, StudyError> {
        match self {
            ManifestSource::Path(p) => Ok(load_manifest(p)?),
            ManifestSource::Inline(m) => Ok(m),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub real_manifest: ManifestSource,
    pub synth_manifest: ManifestSource,
    pub n_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub struct OpenSessionRequest {
    pub rater_tag: String,
}

#[derive(Debug, Deserialize)]
pub struct ResponseRequest {
    pub item_id: String,
    pub answer: Origin,
    #[serde(default)]
    pub elapsed_ms: Option<u64>,
}

/// One imported answer, as `[item_id, answer]` or `{item_id, answer}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ImportEntry {
    Pair(String, Origin),
    Object { item_id: String, answer: Origin },
}

#[derive(Debug, Deserialize)]
pub struct ImportRequest {
    pub rater_tag: String,
    pub responses: Vec<ImportEntry>,
}

#[derive(Debug, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub format: Option<ReportFormat>,
}

pub fn router(service: Arc<StudyService>) -> Router {
    Router::new()
        .route("/studies", post(create_study))
        .route("/studies/{id}/sessions", post(open_session))
        .route("/studies/{id}/items", get(study_items))
        .route("/studies/{id}/close", post(close_study))
        .route("/studies/{id}/report", get(report))
        .route("/studies/{id}/import_session", post(import_session))
        .route("/sessions/{sid}/next", get(next_item))
        .route("/sessions/{sid}/responses", post(submit_response))
        .route("/items/{item_id}/image", get(item_image))
        .with_state(service)
}

/// Serves the API on an already-bound listener until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<StudyService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

async fn create_study(State(svc): State<Arc<StudyService>>, Json(req): Json<CreateRequest>) -> ApiResult<Response> {
    let created = blocking(move || {
        let real = req.real_manifest.load()?;
        let synth = req.synth_manifest.load()?;
        svc.create_study(&real, &synth, req.n_per_class, req.seed)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn open_session(
    State(svc): State<Arc<StudyService>>,
    Path(id): Path<String>,
    Json(req): Json<OpenSessionRequest>,
) -> ApiResult<Response> {
    let opened = blocking(move || svc.open_session(&id, &req.rater_tag)).await?;
    Ok((StatusCode::CREATED, Json(opened)).into_response())
}

async fn study_items(State(svc): State<Arc<StudyService>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.study_items(&id)?).into_response())
}

async fn next_item(State(svc): State<Arc<StudyService>>, Path(sid): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.next_item(&sid)?).into_response())
}

async fn submit_response(
    State(svc): State<Arc<StudyService>>,
    Path(sid): Path<String>,
    Json(req): Json<ResponseRequest>,
) -> ApiResult<Response> {
    let ack = blocking(move || svc.submit_response(&sid, &req.item_id, req.answer, req.elapsed_ms)).await?;
    Ok(Json(ack).into_response())
}

async fn item_image(State(svc): State<Arc<StudyService>>, Path(item_id): Path<String>) -> ApiResult<Response> {
    let (bytes, content_type) = blocking(move || svc.item_image(&item_id)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (header::CACHE_CONTROL, "no-store"),
        ],
        bytes,
    )
        .into_response())
}

async fn close_study(State(svc): State<Arc<StudyService>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || svc.close_study(&id)).await?;
    Ok(Json(json!({ "closed": true })).into_response())
}

async fn report(
    State(svc): State<Arc<StudyService>>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let bundle = svc.report(&id)?;
    Ok(match q.format.unwrap_or(ReportFormat::Machine) {
        ReportFormat::Machine => ([(header::CONTENT_TYPE, "application/json")], bundle.machine_form()).into_response(),
        ReportFormat::Md => (
            [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
            bundle.to_markdown(),
        )
            .into_response(),
    })
}

async fn import_session(
    State(svc): State<Arc<StudyService>>,
    Path(id): Path<String>,
    Json(req): Json<ImportRequest>,
) -> ApiResult<Response> {
    let responses: Vec<(String, Origin)> = req
        .responses
        .into_iter()
        .map(|e| match e {
            ImportEntry::Pair(item_id, answer) | ImportEntry::Object { item_id, answer } => (item_id, answer),
        })
        .collect();
    let imported = blocking(move || svc.import_session(&id, &req.rater_tag, &responses)).await?;
    Ok((StatusCode::CREATED, Json(imported)).into_response())
}
