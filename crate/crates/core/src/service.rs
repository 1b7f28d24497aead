//! HTTP API over a data directory: runs, disagreements, annotations, reports.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

use crate::error_analysis::{
    disagreements_from, record_annotation, AnalysisError, AnnotationInput, AnnotationStore, DisagreementRecord,
    ErrorAnnotation,
};
use crate::report::{build_report, render, ReportError, ReportFormat};
use crate::store::{RunHeader, RunStore, StoreError};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let msg = e.to_string();
        match e {
            AnalysisError::UnknownRun(_) => Self::new(StatusCode::NOT_FOUND, "unknown_run", msg),
            AnalysisError::UnknownRecord(_) => Self::new(StatusCode::NOT_FOUND, "unknown_record", msg),
            AnalysisError::InvalidCause(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_cause", msg),
            AnalysisError::InvalidVerdict(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_verdict", msg),
            AnalysisError::InvalidAnnotator => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotator", msg),
            AnalysisError::Store(StoreError::InvalidRunId(_)) => Self::new(StatusCode::NOT_FOUND, "unknown_run", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        AnalysisError::from(e).into()
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Analysis(a) => a.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

/// Disagreements and the annotation writer of one run, loaded once.
struct RunContext {
    records: Vec<DisagreementRecord>,
    annotations: AnnotationStore,
}

#[derive(Clone)]
pub struct AppState {
    store: RunStore,
    runs: Arc<Mutex<HashMap<String, Arc<RunContext>>>>,
}

impl AppState {
    pub fn new(store: RunStore) -> Self {
        Self {
            store,
            runs: Arc::default(),
        }
    }

    fn context(&self, run_id: &str) -> Result<Arc<RunContext>, ApiError> {
        let mut runs = self.runs.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(ctx) = runs.get(run_id) {
            return Ok(ctx.clone());
        }
        let results = self.store.load_results(run_id)?;
        let ctx = Arc::new(RunContext {
            records: disagreements_from(run_id, &results),
            annotations: AnnotationStore::open(&self.store.run_dir(run_id)?)?,
        });
        runs.insert(run_id.into(), ctx.clone());
        Ok(ctx)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn list_runs(State(state): State<AppState>) -> Result<Json<Vec<RunHeader>>, ApiError> {
    blocking(move || Ok(Json(state.store.list_runs()?))).await
}

#[derive(Debug, Default, Deserialize)]
pub struct DisagreementQuery {
    pub class: Option<String>,
    pub annotated: Option<bool>,
}

/// A disagreement with its current annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementView {
    #[serde(flatten)]
    pub record: DisagreementRecord,
    pub annotations: Vec<ErrorAnnotation>,
}

async fn get_disagreements(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<DisagreementQuery>,
) -> Result<Json<Vec<DisagreementView>>, ApiError> {
    blocking(move || {
        let ctx = state.context(&run_id)?;
        let current = ctx.annotations.snapshot();
        let views = ctx
            .records
            .iter()
            .filter(|r| q.class.as_ref().is_none_or(|c| &r.class_iri == c))
            .map(|r| DisagreementView {
                record: r.clone(),
                annotations: current.for_record(&r.record_id).cloned().collect(),
            })
            .filter(|v| q.annotated.is_none_or(|want| want == !v.annotations.is_empty()))
            .collect();
        Ok(Json(views))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnnotationBody {
    pub record_id: String,
    #[serde(flatten)]
    pub input: AnnotationInput,
}

async fn post_annotation(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    body: Result<Json<AnnotationBody>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<ErrorAnnotation>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text()))?;
    blocking(move || {
        let ctx = state.context(&run_id)?;
        let recorded = record_annotation(&ctx.annotations, &ctx.records, &body.record_id, &body.input)?;
        let status = if recorded.overwritten {
            StatusCode::OK
        } else {
            StatusCode::CREATED
        };
        Ok((status, Json(recorded.annotation)))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportQuery {
    pub format: Option<String>,
}

async fn get_report(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ApiError> {
    let format = match q.format.as_deref() {
        None => ReportFormat::Json,
        Some(f) => f
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_format", e))?,
    };
    blocking(move || {
        // Built from disk on every request so it reflects the latest annotations.
        let body = render(&build_report(&state.store, &run_id)?, format)?;
        let content_type = match format {
            ReportFormat::Json => "application/json",
            ReportFormat::Csv => "text/csv; charset=utf-8",
            ReportFormat::Markdown => "text/markdown; charset=utf-8",
            ReportFormat::Text => "text/plain; charset=utf-8",
        };
        Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
    })
    .await
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn index() -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        "kgaudit review service\n\nGET  /api/v1/runs\nGET  /api/v1/runs/{id}/disagreements?class=&annotated=\nPOST /api/v1/runs/{id}/annotations\nGET  /api/v1/runs/{id}/report?format=json|text|csv|markdown\n",
    )
}

/// The application router. Static assets, when given, are served at `/`.
pub fn router(store: RunStore, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/:id/disagreements", get(get_disagreements))
        .route("/runs/:id/annotations", post(post_annotation))
        .route("/runs/:id/report", get(get_report))
        .fallback(api_not_found)
        .with_state(AppState::new(store));
    let app = Router::new().nest("/api/v1", api);
    match static_dir.filter(|d| d.is_dir()) {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(index)),
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServiceError::AddressInUse(addr)
        } else {
            ServiceError::Bind { addr, source }
        }
    })
}

/// Serves until `shutdown` resolves, then drains in-flight requests. Every
/// accepted annotation has already been synced to its log.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}
