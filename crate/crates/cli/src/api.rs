//! JSON API over a review store, consumed by the review UI.
//!
//! Every error body is `{"code": ..., "message": ...}`. When a token is
//! configured, everything except `/api/health` needs `Authorization: Bearer`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::Serialize;

use paracode_core::classifiers::ModelBundle;
use paracode_core::corpus::{write_corpus_jsonl, Corpus, Dimension, Role};
use paracode_core::embedding::VectorCache;
use paracode_core::evaluation::emit_report;
use paracode_core::service::{cmd_evaluate, PipelineConfig, ReviewStore, ServiceError, VerdictSubmission, MAX_PAGE_LIMIT};
use paracode_core::ReportFormat;

/// Environment variable holding the shared bearer token.
pub const TOKEN_ENV: &str = "PARACODE_TOKEN";

/// What `/api/evaluate` needs. Optional: without it the endpoint answers 404.
pub struct Evaluator {
    pub config: PipelineConfig,
    pub bundle: ModelBundle,
    pub vectors: VectorCache,
}

pub struct AppState {
    /// Single writer; readers see a consistent store between writes.
    store: RwLock<ReviewStore>,
    corpus: Corpus,
    token: Option<String>,
    evaluator: Option<Evaluator>,
}

impl AppState {
    pub fn new(store: ReviewStore, corpus: Corpus) -> Self {
        Self {
            store: RwLock::new(store),
            corpus,
            token: None,
            evaluator: None,
        }
    }

    /// Empty tokens count as no token.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    pub fn with_evaluator(mut self, evaluator: Evaluator) -> Self {
        self.evaluator = Some(evaluator);
        self
    }

    pub fn requires_token(&self) -> bool {
        self.token.is_some()
    }

    fn read(&self) -> Result<RwLockReadGuard<'_, ReviewStore>, ApiError> {
        self.store.read().map_err(|_| ServiceError::StorePoisoned.into())
    }

    fn write(&self) -> Result<RwLockWriteGuard<'_, ReviewStore>, ApiError> {
        self.store.write().map_err(|_| ServiceError::StorePoisoned.into())
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }
}

/// HTTP status for a service error.
pub fn status_for(error: &ServiceError) -> StatusCode {
    match error {
        ServiceError::UnknownSession(_) | ServiceError::UnknownParagraph { .. } => StatusCode::NOT_FOUND,
        ServiceError::BadCursor(_) | ServiceError::MalformedSubmission(_) => StatusCode::BAD_REQUEST,
        ServiceError::RoleEmpty(_) | ServiceError::MissingGold(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::ProviderMismatch { .. } => StatusCode::CONFLICT,
        ServiceError::InjectedCrash(_) | ServiceError::StorePoisoned | ServiceError::CorruptStore(_) => {
            StatusCode::SERVICE_UNAVAILABLE
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<ServiceError> for ApiError {
    fn from(error: ServiceError) -> Self {
        let status = status_for(&error);
        if status.is_server_error() {
            warn!("request failed: {error}");
        }
        Self {
            status,
            code: error.code(),
            message: error.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/shortlist", get(shortlist))
        .route("/sessions/{id}/verdicts", post(post_verdict))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/export", post(export))
        .route("/evaluate", get(evaluate))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health));
    Router::new()
        .nest("/api", api)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError {
                status: StatusCode::METHOD_NOT_ALLOWED,
                code: "method_not_allowed",
                message: "method not allowed on this endpoint".into(),
            }
        })
        .with_state(state)
}

/// Length-independent comparison so the token cannot be guessed byte by byte.
fn token_matches(expected: &str, given: &str) -> bool {
    let (a, b) = (expected.as_bytes(), given.as_bytes());
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        if !bearer(request.headers()).is_some_and(|t| token_matches(expected, t)) {
            let mut response = ApiError {
                status: StatusCode::UNAUTHORIZED,
                code: "unauthorized",
                message: "missing or invalid bearer token".into(),
            }
            .into_response();
            response
                .headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
            return response;
        }
    }
    next.run(request).await
}

fn params(
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
    allowed: &[&str],
) -> ApiResult<HashMap<String, String>> {
    let Query(map) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if let Some(unknown) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ApiError::bad_request(format!(
            "unknown query parameter {unknown:?} (expected one of {})",
            allowed.join(", ")
        )));
    }
    Ok(map)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(Json(state.read()?.sessions()).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let store = state.read()?;
    store.session(&id)?;
    let summary = store.sessions().into_iter().find(|s| s.session_id == id);
    Ok(Json(summary).into_response())
}

async fn shortlist(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult<Response> {
    let q = params(query, &["dim", "cursor", "limit"])?;
    let dimension = match q.get("dim").map(String::as_str) {
        None | Some("") | Some("all") => None,
        Some(d) => Some(d.parse::<Dimension>().map_err(ApiError::bad_request)?),
    };
    let cursor = q.get("cursor").map(String::as_str).filter(|c| !c.is_empty());
    let limit = match q.get("limit").map(String::as_str) {
        None | Some("") => None,
        Some(l) => match l.parse::<usize>() {
            Ok(n) if n >= 1 => Some(n.min(MAX_PAGE_LIMIT)),
            _ => return Err(ApiError::bad_request(format!("limit must be an integer in 1..={MAX_PAGE_LIMIT}"))),
        },
    };
    let page = state.read()?.page(&id, dimension, cursor, limit)?;
    Ok(Json(page).into_response())
}

async fn post_verdict(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let submission = VerdictSubmission::from_json(&body)?;
    // The journal write ends in an fsync; keep it off the async workers.
    let verdict = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        let verdict = state.write()?.submit(&id, submission)?;
        Ok(verdict)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })??;
    info!(
        "verdict {} {} {}/{} by {}",
        verdict.verdict_id,
        verdict.session_id,
        verdict.para_id,
        verdict.dimension,
        verdict.coder_id
    );
    Ok(Json(verdict).into_response())
}

async fn progress(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(state.read()?.progress(&id)?).into_response())
}

/// The corrected corpus as JSON lines, ready for `paracode train`.
async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let paragraphs = state.read()?.export(&id, &state.corpus)?;
    let mut body = Vec::new();
    write_corpus_jsonl(&mut body, &paragraphs).map_err(ServiceError::from)?;
    let disposition = format!("attachment; filename=\"{id}.corrected.jsonl\"");
    let mut response = body.into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    if let Ok(value) = HeaderValue::from_str(&disposition) {
        headers.insert(header::CONTENT_DISPOSITION, value);
    }
    Ok(response)
}

/// Without `format` the full report is returned as JSON; with it, the same
/// rendered tables `paracode evaluate --format` prints.
async fn evaluate(
    State(state): State<Arc<AppState>>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult<Response> {
    let q = params(query, &["role", "format"])?;
    let Some(evaluator) = &state.evaluator else {
        return Err(ApiError::not_found("the service was started without a model bundle"));
    };
    let role = match q.get("role") {
        None => Role::Test,
        Some(r) => r.parse::<Role>().map_err(ApiError::bad_request)?,
    };
    let format = q
        .get("format")
        .map(|f| f.parse::<ReportFormat>().map_err(ApiError::bad_request))
        .transpose()?;
    let report = cmd_evaluate(
        &evaluator.config,
        &evaluator.bundle,
        &state.corpus,
        &evaluator.vectors,
        role,
    )?;
    let Some(format) = format else {
        return Ok(Json(report).into_response());
    };
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Text => "text/plain; charset=utf-8",
    };
    let mut response = emit_report(&report, format).into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    Ok(response)
}
