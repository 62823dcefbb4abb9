//! HTTP inference service.
//!
//! ```text
//! POST /v1/colorize   {image, hints, model?, r?, mask_debug?} -> {image, timing_ms, mask_debug?}
//! GET  /v1/health     {status, model_ids, versions}
//! GET  /v1/models     [{id, config, sha256}]
//! ```
//!
//! Checkpoints are immutable once loaded and shared behind an `Arc`; the
//! state lock is only held to look a model up or to swap one in.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::checkpoint::{self, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::imageio::{decode_image, encode_png};
use crate::interaction::{rle_encode, HintSetJson};
use crate::model::{Model, ModelConfig};
use crate::pipeline::{colorize, DEFAULT_R};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8791";
pub const MAX_HINTS: usize = 512;
pub const MAX_BODY_BYTES: usize = 8 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub id: String,
    pub model: Arc<Model>,
    pub sha256: String,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct ServiceState {
    loading: usize,
    models: BTreeMap<String, LoadedModel>,
}

impl ServiceState {
    pub fn is_loading(&self) -> bool {
        self.loading > 0
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }
}

pub type SharedState = Arc<RwLock<ServiceState>>;

pub fn new_state() -> SharedState {
    Arc::new(RwLock::new(ServiceState::default()))
}

/// Model id for a checkpoint path: the file stem.
pub fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Adds (or replaces) a model already in memory.
pub fn insert_model(state: &SharedState, id: impl Into<String>, model: Model) -> Result<()> {
    let bytes = checkpoint::to_bytes(&model)?;
    let id = id.into();
    let entry = LoadedModel {
        id: id.clone(),
        model: Arc::new(model),
        sha256: checkpoint::digest(&bytes),
        path: None,
    };
    state.write().expect("state lock").models.insert(id, entry);
    Ok(())
}

/// Reads and installs a checkpoint. Health reports 503 for the duration;
/// the write lock is taken only for the final swap.
pub fn load_checkpoint(state: &SharedState, path: &Path) -> Result<String> {
    state.write().expect("state lock").loading += 1;
    let loaded = (|| {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model = checkpoint::from_bytes(&bytes)?;
        Ok::<_, Error>(LoadedModel {
            id: model_id(path),
            model: Arc::new(model),
            sha256: checkpoint::digest(&bytes),
            path: Some(path.to_path_buf()),
        })
    })();
    let mut st = state.write().expect("state lock");
    st.loading -= 1;
    let loaded = loaded?;
    let id = loaded.id.clone();
    st.models.insert(id.clone(), loaded);
    log::info!("loaded checkpoint {} as {id}", path.display());
    Ok(id)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorizeRequest {
    /// Base64 PNG (grayscale or RGB).
    pub image: String,
    #[serde(default)]
    pub hints: HintSetJson,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub r: Option<f32>,
    #[serde(default)]
    pub mask_debug: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskDebug {
    pub hint: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub rle: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColorizeResponse {
    pub image: String,
    pub timing_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_debug: Option<Vec<MaskDebug>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub config: ModelConfig,
    pub sha256: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    fn bad_request(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            ..Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Input { field, message } => ApiError::bad_request(field, message),
            Error::Image(e) => ApiError::bad_request("image", e.to_string()),
            Error::Numeric(m) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "numeric", m),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {"code": self.code, "message": self.message, "field": self.field}
        });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: SharedState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/colorize", post(colorize_handler))
        .route("/v1/health", get(health))
        .route("/v1/models", get(models))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

async fn health(State(state): State<SharedState>) -> Response {
    let st = state.read().expect("state lock");
    let versions = json!({
        "service": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": FORMAT_VERSION,
    });
    if st.is_loading() {
        let body = json!({"status": "loading", "model_ids": st.model_ids(), "versions": versions});
        return (StatusCode::SERVICE_UNAVAILABLE, Json(body)).into_response();
    }
    Json(json!({"status": "ok", "model_ids": st.model_ids(), "versions": versions})).into_response()
}

async fn models(State(state): State<SharedState>) -> Json<Vec<ModelInfo>> {
    let st = state.read().expect("state lock");
    Json(
        st.models
            .values()
            .map(|m| ModelInfo {
                id: m.id.clone(),
                config: m.model.config.clone(),
                sha256: m.sha256.clone(),
            })
            .collect(),
    )
}

fn parse_request(body: &[u8]) -> Result<ColorizeRequest, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(if path == "." { String::new() } else { path }, e.inner().to_string())
    })
}

fn pick_model(state: &SharedState, id: Option<&str>) -> Result<Arc<Model>, ApiError> {
    let st = state.read().expect("state lock");
    if st.models.is_empty() {
        let msg = if st.is_loading() { "checkpoint still loading" } else { "no checkpoint loaded" };
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", msg));
    }
    let entry = match id {
        Some(id) => st.models.get(id),
        None => st.models.values().next(),
    };
    entry.map(|m| m.model.clone()).ok_or_else(|| {
        ApiError {
            field: Some("model".into()),
            ..ApiError::new(StatusCode::NOT_FOUND, "unknown_model", format!("no model {:?}", id.unwrap_or("")))
        }
    })
}

/// Request handling without the HTTP layer; blocking (runs the model).
pub fn handle_colorize(state: &SharedState, body: &[u8]) -> Result<ColorizeResponse, ApiError> {
    let start = Instant::now();
    let req = parse_request(body)?;
    let model = pick_model(state, req.model.as_deref())?;
    if req.hints.hints.len() > MAX_HINTS {
        return Err(ApiError {
            field: Some("hints".into()),
            ..ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "too_many_hints",
                format!("{} hints, limit is {MAX_HINTS}", req.hints.hints.len()),
            )
        });
    }
    let png = B64
        .decode(req.image.trim())
        .map_err(|e| ApiError::bad_request("image", format!("base64: {e}")))?;
    let img = decode_image(&png).map_err(|e| ApiError::bad_request("image", e.to_string()))?;
    let hints = req.hints.into_hint_set(img.width, img.height)?;
    let out = colorize(&model, &img, &hints, req.r.unwrap_or(DEFAULT_R))?;
    let mask_debug = req.mask_debug.then(|| {
        let (gh, gw) = (model.config.height / model.config.patch, model.config.width / model.config.patch);
        (0..hints.len())
            .map(|i| MaskDebug {
                hint: i,
                grid_width: gw,
                grid_height: gh,
                rle: rle_encode(out.mask.row(i + 1)),
            })
            .collect()
    });
    Ok(ColorizeResponse {
        image: B64.encode(encode_png(&out.image)?),
        timing_ms: start.elapsed().as_millis() as u64,
        mask_debug,
    })
}

async fn colorize_handler(State(state): State<SharedState>, body: Bytes) -> Result<Json<ColorizeResponse>, ApiError> {
    let res = tokio::task::spawn_blocking(move || handle_colorize(&state, &body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    res.map(Json)
}

/// Binds `addr`, loads `checkpoints` in the background and serves until
/// the process is stopped.
pub async fn serve(addr: SocketAddr, checkpoints: Vec<PathBuf>) -> Result<()> {
    let state = new_state();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))?;
    log::info!("listening on {addr}");
    let loader = state.clone();
    tokio::task::spawn_blocking(move || {
        for path in checkpoints {
            if let Err(e) = load_checkpoint(&loader, &path) {
                log::error!("failed to load {}: {e}", path.display());
            }
        }
    });
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))
}
