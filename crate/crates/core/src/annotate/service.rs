//! HTTP JSON API over a [`Store`]. All `/api` routes require
//! `Authorization: Bearer <token>`; static UI files are public.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{AnnotateError, Store, Submission, TaskKind};

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "ANNOTATE_TOKEN";

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub token: String,
    /// Directory of built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    token: Arc<str>,
}

struct ApiError(AnnotateError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, field) = match &self.0 {
            AnnotateError::UnknownTask(_) | AnnotateError::UnknownCaption(_) => (StatusCode::NOT_FOUND, None),
            AnnotateError::Validation { field, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(*field)),
            AnnotateError::TaskComplete(_) => (StatusCode::CONFLICT, None),
            AnnotateError::MissingCritiques => (StatusCode::BAD_REQUEST, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        let mut body = json!({ "error": self.0.to_string() });
        if let Some(f) = field {
            body["field"] = json!(f);
        }
        (status, Json(body)).into_response()
    }
}

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        ApiError(e)
    }
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented != Some(&*state.token) {
        return (
            StatusCode::UNAUTHORIZED,
            [(header::WWW_AUTHENTICATE, "Bearer")],
            Json(json!({ "error": "missing or invalid bearer token" })),
        )
            .into_response();
    }
    next.run(req).await
}

#[derive(Deserialize)]
struct NextQuery {
    rater_id: String,
    #[serde(default = "default_kind")]
    kind: String,
}

fn default_kind() -> String {
    "sentence".into()
}

async fn next_task(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let kind: TaskKind = q.kind.parse()?;
    Ok(match state.store.next_task(&q.rater_id, kind) {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(
    State(state): State<AppState>,
    Path(task_id): Path<String>,
    body: Result<Json<Submission>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(mut sub) = body.map_err(|e| AnnotateError::Validation {
        field: "body",
        reason: e.body_text(),
    })?;
    if !sub.task_id.is_empty() && sub.task_id != task_id {
        return Err(AnnotateError::Validation {
            field: "task_id",
            reason: format!("body names `{}` but the URL names `{task_id}`", sub.task_id),
        }
        .into());
    }
    sub.task_id = task_id;
    let store = state.store.clone();
    let ack = tokio::task::spawn_blocking(move || store.submit(sub))
        .await
        .map_err(|e| AnnotateError::Io(std::io::Error::other(e)))??;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn task(State(state): State<AppState>, Path(task_id): Path<String>) -> Result<Response, ApiError> {
    let detail = state
        .store
        .task(&task_id)
        .ok_or(AnnotateError::UnknownTask(task_id))?;
    Ok(Json(detail).into_response())
}

async fn progress(State(state): State<AppState>) -> Response {
    let p = state.store.progress();
    let body: serde_json::Map<String, serde_json::Value> = p
        .into_iter()
        .map(|(k, v)| (k.as_str().to_string(), json!(v)))
        .collect();
    Json(body).into_response()
}

#[derive(Deserialize)]
struct ExportQuery {
    kind: String,
}

async fn export(State(state): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let kind: TaskKind = q.kind.parse()?;
    let mut buf = Vec::new();
    state.store.export(kind, &mut buf)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], buf).into_response())
}

pub fn router(store: Arc<Store>, token: &str, static_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        store,
        token: Arc::from(token),
    };
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{task_id}/submissions", post(submit))
        .route("/api/tasks/{task_id}", get(task))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(store: Arc<Store>, opts: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    let app = router(store, &opts.token, opts.static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
