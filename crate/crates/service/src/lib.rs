//! HTTP/JSON facade over adaptive-test sessions.
//!
//! Sessions live in memory behind one lock each, so mutations of a session
//! are serialized while different sessions proceed independently. With a data
//! directory configured, every mutation writes the session's event log to
//! `<data-dir>/<id>.json` before the response is sent, and those logs are
//! replayed on startup.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::RwLock;
use tower_http::cors::CorsLayer;

use raschcat_core::api::{AnswerRequest, ApiSession, ErrorBody, PosteriorView, WhatIf};
use raschcat_core::session::BankSource;
use raschcat_core::{CatError, ItemBank, SessionConfig, SessionState};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    #[error(transparent)]
    Core(#[from] CatError),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad-request"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ServiceError::Core(e) => match e {
                CatError::Protocol(_) => (StatusCode::CONFLICT, "protocol"),
                CatError::Exhausted => (StatusCode::CONFLICT, "exhausted"),
                CatError::Domain(_) => (StatusCode::BAD_REQUEST, "domain"),
                CatError::InvalidPrior(_) => (StatusCode::BAD_REQUEST, "invalid-prior"),
                CatError::InvalidGrid(_) => (StatusCode::BAD_REQUEST, "invalid-grid"),
                CatError::UnsupportedEstimator(_) => {
                    (StatusCode::BAD_REQUEST, "unsupported-estimator")
                }
                CatError::InvalidBank(_) => (StatusCode::BAD_REQUEST, "invalid-bank"),
                CatError::Config(_) => (StatusCode::BAD_REQUEST, "invalid-config"),
                CatError::Json(_) | CatError::Csv(_) => (StatusCode::BAD_REQUEST, "bad-request"),
                CatError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            code: code.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(rejection: JsonRejection) -> Self {
        ServiceError::BadRequest(rejection.body_text())
    }
}

type Slot = Arc<RwLock<SessionState>>;

pub struct AppState {
    sessions: RwLock<HashMap<String, Slot>>,
    default_bank: ItemBank,
    data_dir: Option<PathBuf>,
}

impl AppState {
    /// Builds the store, replaying any logs found in `data_dir`. Unreadable
    /// logs are skipped with a warning.
    pub async fn new(default_bank: ItemBank, data_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &data_dir {
            tokio::fs::create_dir_all(dir).await?;
            let mut entries = tokio::fs::read_dir(dir).await?;
            while let Some(entry) = entries.next_entry().await? {
                let path = entry.path();
                if path.extension().is_none_or(|e| e != "json") {
                    continue;
                }
                let bytes = tokio::fs::read(&path).await?;
                match SessionState::load(&bytes) {
                    Ok(state) => {
                        sessions.insert(state.id().to_string(), Arc::new(RwLock::new(state)));
                    }
                    Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
                }
            }
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            default_bank,
            data_dir,
        })
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.read().await.len()
    }

    async fn slot(&self, id: &str) -> Result<Slot, ServiceError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    async fn persist(&self, state: &SessionState) -> Result<(), ServiceError> {
        if let Some(path) = self.log_path(state.id()) {
            write_atomic(&path, &state.save()).await.map_err(|e| {
                ServiceError::Internal(format!("persisting {}: {e}", path.display()))
            })?;
        }
        Ok(())
    }
}

async fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    tokio::fs::write(&tmp, bytes).await?;
    tokio::fs::rename(&tmp, path).await
}

/// Runs CPU-bound session work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/posterior", get(get_posterior))
        .route("/sessions/{id}/whatif", get(get_whatif))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<ApiSession>), ServiceError> {
    let Json(mut config) = body?;
    match &config.bank {
        None => config.bank = Some(BankSource::Inline(app.default_bank.clone())),
        Some(BankSource::Path(_)) => {
            return Err(ServiceError::BadRequest(
                "bank paths are not accepted over HTTP; send the items inline".into(),
            ))
        }
        Some(_) => {}
    }
    let state = blocking(move || SessionState::start(config)).await??;
    app.persist(&state).await?;
    let view = ApiSession::from_state(&state);
    app.sessions
        .write()
        .await
        .insert(state.id().to_string(), Arc::new(RwLock::new(state)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ApiSession>, ServiceError> {
    let slot = app.slot(&id).await?;
    let state = slot.read().await;
    Ok(Json(ApiSession::from_state(&state)))
}

async fn submit_response(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AnswerRequest>, JsonRejection>,
) -> Result<Json<ApiSession>, ServiceError> {
    let Json(answer) = body?;
    let slot = app.slot(&id).await?;
    let guard = slot.write_owned().await;
    let (guard, outcome) = blocking(move || {
        let mut guard = guard;
        let outcome = apply_answer(&mut guard, answer);
        (guard, outcome)
    })
    .await?;
    outcome?;
    app.persist(&guard).await?;
    Ok(Json(ApiSession::from_state(&guard)))
}

/// Records the answer and serves the next item. A protocol error leaves the
/// session untouched; running out of items finishes it.
fn apply_answer(state: &mut SessionState, answer: AnswerRequest) -> Result<(), CatError> {
    state.submit(&answer.item_id, answer.response)?;
    if !state.is_finished() {
        match state.next_item() {
            Ok(_) | Err(CatError::Exhausted) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

async fn get_posterior(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<PosteriorView>, ServiceError> {
    let slot = app.slot(&id).await?;
    let guard = slot.read_owned().await;
    let view = blocking(move || PosteriorView::from_state(&guard)).await?;
    Ok(Json(view))
}

async fn get_whatif(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<WhatIf>, ServiceError> {
    let slot = app.slot(&id).await?;
    let guard = slot.read_owned().await;
    let view = blocking(move || WhatIf::from_state(&guard)).await??;
    Ok(Json(view))
}

async fn delete_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let removed = app.sessions.write().await.remove(&id);
    if removed.is_none() {
        return Err(ServiceError::NotFound(id));
    }
    if let Some(path) = app.log_path(&id) {
        match tokio::fs::remove_file(&path).await {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(ServiceError::Internal(e.to_string())),
        }
    }
    Ok(Json(serde_json::json!({ "deleted": id })))
}

/// Serves the API on an already-bound listener until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
