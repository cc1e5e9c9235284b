//! HTTP JSON API over a [`CampaignStore`].
//!
//! Store calls block on the per-campaign writer and on fsync, so handlers
//! run them on the blocking pool.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::config::CampaignConfig;
use crate::state::{CampaignError, RatingSubmission};
use crate::store::CampaignStore;

pub const PARTIAL_HEADER: &str = "x-export-partial";

#[derive(Clone)]
struct AppState {
    store: Arc<CampaignStore>,
    defaults: CampaignConfig,
}

pub struct ApiError(CampaignError);

impl From<CampaignError> for ApiError {
    fn from(e: CampaignError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &CampaignError) -> StatusCode {
    use CampaignError::*;
    match e {
        InvalidConfig(_) | InvalidId(_) | InvalidManifest(_) | InvalidRequest(_) | InvalidScore { .. } => {
            StatusCode::BAD_REQUEST
        }
        SubjectMismatch { .. } => StatusCode::FORBIDDEN,
        UnknownCampaign(_) | UnknownSession(_) => StatusCode::NOT_FOUND,
        Conflict(_) | NothingToAssign(_) | CampaignComplete | DuplicateRating { .. } | OutOfOrderSubmission { .. } => {
            StatusCode::CONFLICT
        }
        SessionExpired(_) => StatusCode::GONE,
        Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.code(), "message": self.0.to_string() }))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, CampaignError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(CampaignError::Storage(e.to_string())))?
        .map_err(ApiError)
}

/// Campaign config fields a client may override; the rest come from the service defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOverrides {
    raters_per_item: Option<usize>,
    session_item_cap: Option<usize>,
    randomize: Option<bool>,
    seed: Option<u64>,
    idle_timeout_secs: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    campaign_id: Option<String>,
    /// Path of the manifest on the server's filesystem.
    manifest: PathBuf,
    #[serde(default)]
    config: ConfigOverrides,
}

#[derive(Debug, Deserialize)]
struct SessionBody {
    subject_id: String,
}

async fn create(State(app): State<AppState>, Json(body): Json<CreateBody>) -> Result<Response, ApiError> {
    let o = body.config;
    let d = app.defaults;
    let config = CampaignConfig {
        raters_per_item: o.raters_per_item.unwrap_or(d.raters_per_item),
        session_item_cap: o.session_item_cap.unwrap_or(d.session_item_cap),
        randomize: o.randomize.unwrap_or(d.randomize),
        seed: o.seed.unwrap_or(d.seed),
        idle_timeout_secs: o.idle_timeout_secs.unwrap_or(d.idle_timeout_secs),
    };
    let store = app.store.clone();
    let created = blocking(move || store.create(body.campaign_id, &body.manifest, config, Utc::now())).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn progress(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(app.store.progress(&id)?).into_response())
}

async fn open_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SessionBody>,
) -> Result<Response, ApiError> {
    let store = app.store.clone();
    let view = blocking(move || store.next_session(&id, &body.subject_id, Utc::now())).await?;
    let status = if view.fresh { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(view)).into_response())
}

async fn current(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = app.store.clone();
    Ok(Json(blocking(move || store.current(&id, Utc::now())).await?).into_response())
}

async fn submit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<RatingSubmission>,
) -> Result<Response, ApiError> {
    let store = app.store.clone();
    Ok(Json(blocking(move || store.submit(&id, &body, Utc::now())).await?).into_response())
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = app.store.clone();
    let export = blocking(move || store.export(&id)).await?;
    let mut response = Response::new(Body::from(export.to_jsonl()));
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    headers.insert(
        PARTIAL_HEADER,
        HeaderValue::from_static(if export.partial { "true" } else { "false" }),
    );
    Ok(response)
}

async fn image(State(app): State<AppState>, Path((item_id, kind)): Path<(String, String)>) -> Response {
    let Some((source, edited)) = app.store.image_paths(&item_id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let path = match kind.as_str() {
        "source" => source,
        "edited" => edited,
        _ => return StatusCode::NOT_FOUND.into_response(),
    };
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "image unreadable");
            StatusCode::NOT_FOUND.into_response()
        }
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(store: Arc<CampaignStore>, defaults: CampaignConfig) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/campaigns", post(create))
        .route("/campaigns/{id}/progress", get(progress))
        .route("/campaigns/{id}/sessions", post(open_session))
        .route("/campaigns/{id}/export", get(export))
        .route("/sessions/{id}/current", get(current))
        .route("/sessions/{id}/ratings", post(submit))
        .route("/images/{item_id}/{kind}", get(image))
        .with_state(AppState { store, defaults })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    store: Arc<CampaignStore>,
    defaults: CampaignConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "campaign service listening");
    }
    axum::serve(listener, router(store, defaults))
        .with_graceful_shutdown(shutdown)
        .await
}
