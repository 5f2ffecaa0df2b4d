//! REST facade over the correspondence engine for interactive annotation.
//!
//! Sessions live in memory. Each one holds a template with editable prompts
//! and a list of targets; matches, masks and heatmaps are computed on demand
//! and cached per prompt revision.

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use corrseg::backends::{FeatureProvider, FileProvider, HttpMaskPredictor};
use corrseg::segmentation::MaskPredictor;
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

pub use error::{ApiError, ApiResult};
pub use session::{ImageInfo, PromptEdit, Session, SessionConfig, Snapshot};

/// Header carrying the prompt revision an artifact was computed at.
pub const REVISION_HEADER: &str = "x-corrseg-revision";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Default DFG1 feature root (`<root>/<model>/<image>.dfg1`).
    pub provider_root: Option<PathBuf>,
    /// Mask predictor base URL; without it sessions use oracle labels.
    pub predictor_endpoint: Option<String>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    providers: Mutex<HashMap<PathBuf, Arc<FileProvider>>>,
    predictor: Option<Arc<dyn MaskPredictor>>,
    next_id: AtomicU64,
    id_salt: u64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let predictor = config
            .predictor_endpoint
            .as_ref()
            .map(|url| Arc::new(HttpMaskPredictor::new(url.clone())) as Arc<dyn MaskPredictor>);
        let id_salt = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        Arc::new(Self {
            config,
            sessions: RwLock::default(),
            providers: Mutex::default(),
            predictor,
            next_id: AtomicU64::new(1),
            id_salt,
        })
    }

    fn provider(&self, session_root: Option<&PathBuf>) -> ApiResult<Arc<dyn FeatureProvider>> {
        let root = session_root
            .or(self.config.provider_root.as_ref())
            .ok_or_else(|| ApiError::unprocessable("no_provider", "no feature root configured"))?;
        let mut providers = self.providers.lock().unwrap();
        let provider = providers
            .entry(root.clone())
            .or_insert_with(|| Arc::new(FileProvider::new(root.clone())))
            .clone();
        Ok(provider)
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id:?}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/prompts", post(add_prompt))
        .route("/sessions/{id}/prompts/{idx}", delete(remove_prompt))
        .route("/sessions/{id}/targets", get(list_targets))
        .route("/sessions/{id}/targets/{tid}/correspondence", get(get_correspondence))
        .route("/sessions/{id}/targets/{tid}/mask", get(get_mask))
        .route("/sessions/{id}/targets/{tid}/heatmap", get(get_heatmap))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `listen` and serves until the process exits.
pub async fn serve(listen: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(AppState::new(config))).await
}

/// Runs CPU-bound engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn session_json(session: &Session) -> serde_json::Value {
    let snap = session.snapshot();
    json!({
        "id": session.id,
        "revision": snap.revision,
        "config": session.config,
        "prompts": snap.prompts,
        "template": session.template_info(),
        "targets": session.target_infos(),
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    config: Result<Json<SessionConfig>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(config) = config?;
    let provider = state.provider(config.provider_root.as_ref())?;
    let predictor = state.predictor.clone();
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("{:x}-{n}", state.id_salt & 0xffff_ffff);
    let session = blocking(move || Session::create(id, config, provider, predictor)).await?;
    let body = session_json(&session);
    state
        .sessions
        .write()
        .unwrap()
        .insert(session.id.clone(), Arc::new(session));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let session = state.session(&id)?;
    Ok(Json(session_json(&session)))
}

async fn add_prompt(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    edit: Result<Json<PromptEdit>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(edit) = edit?;
    let session = state.session(&id)?;
    let (snap, index) = session.add_prompt(edit)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"revision": snap.revision, "index": index, "prompts": snap.prompts})),
    ))
}

async fn remove_prompt(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Path((id, idx)) = path?;
    let session = state.session(&id)?;
    let snap = session.remove_prompt(idx)?;
    Ok(Json(json!({"revision": snap.revision, "prompts": snap.prompts})))
}

async fn list_targets(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let session = state.session(&id)?;
    Ok(Json(json!({
        "revision": session.snapshot().revision,
        "targets": session.target_infos(),
    })))
}

fn artifact(content_type: &'static str, revision: u64, body: Arc<Vec<u8>>) -> Response {
    (
        [
            (header::CONTENT_TYPE, content_type.to_owned()),
            (HeaderName::from_static(REVISION_HEADER), revision.to_string()),
        ],
        body.as_ref().clone(),
    )
        .into_response()
}

async fn get_correspondence(
    State(state): State<Arc<AppState>>,
    Path((id, tid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (rev, body) = blocking(move || session.correspondence(&tid)).await?;
    Ok(artifact("application/json", rev, body))
}

async fn get_mask(State(state): State<Arc<AppState>>, Path((id, tid)): Path<(String, String)>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (rev, body) = blocking(move || session.mask(&tid)).await?;
    Ok(artifact("application/json", rev, body))
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    prompt: usize,
}

async fn get_heatmap(
    State(state): State<Arc<AppState>>,
    Path((id, tid)): Path<(String, String)>,
    query: Result<Query<HeatmapQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let session = state.session(&id)?;
    let (rev, body) = blocking(move || session.heatmap(&tid, q.prompt)).await?;
    Ok(artifact("image/png", rev, body))
}
