//! JSON/PNG facade over a loaded dataset, trained weights and a report
//! directory.
//!
//! | route                                   | body                         |
//! |-----------------------------------------|------------------------------|
//! | `GET  /api/scenes`                      | `[{id, n_objects, classes}]` |
//! | `GET  /api/scenes/{id}/camera/{c}.png`  | 8-bit RGB PNG                |
//! | `GET  /api/scenes/{id}/detections`      | detections + selected set    |
//! | `POST /api/saliency`                    | per-camera heatmaps          |
//! | `GET  /api/perturbation?method=&mode=`  | one perturbation curve       |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use xattn::detector::{filter_detections, forward, Detection, Weights};
use xattn::evalharness::{load_curve, Mode};
use xattn::saliency::{assemble, explain_with, raw_slice, ExplainOptions, Method};
use xattn::scenegen::Scene;
use xattn::Error;

pub struct AppState {
    scenes: Result<Vec<Scene>, String>,
    weights: Weights,
    report_dir: Option<PathBuf>,
    explain: ExplainOptions,
    cache: DashMap<SaliencyKey, Arc<Vec<u8>>>,
}

impl AppState {
    /// `scenes` is an error message when the dataset failed to load; scene
    /// routes then answer 500.
    pub fn new(
        scenes: Result<Vec<Scene>, String>,
        weights: Weights,
        report_dir: Option<PathBuf>,
        explain: ExplainOptions,
    ) -> Self {
        let scenes = scenes.map(|mut s| {
            s.sort_by(|a, b| a.id.cmp(&b.id));
            s
        });
        Self {
            scenes,
            weights,
            report_dir,
            explain,
            cache: DashMap::new(),
        }
    }

    fn scenes(&self) -> Result<&[Scene], ApiError> {
        self.scenes
            .as_deref()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("dataset unavailable: {e}")))
    }

    fn scene(&self, id: &str) -> Result<&Scene, ApiError> {
        self.scenes()?
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ApiError::not_found(format!("unknown scene {id:?}")))
    }

    /// Number of memoized saliency responses.
    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

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

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.code() {
            "invalid-params" | "shape" => StatusCode::UNPROCESSABLE_ENTITY,
            "missing-file" => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{id}/camera/{file}", get(camera_png))
        .route("/api/scenes/{id}/detections", get(detections))
        .route("/api/saliency", post(saliency))
        .route("/api/perturbation", get(perturbation))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub id: String,
    pub n_objects: usize,
    pub classes: Vec<usize>,
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SceneSummary>>, ApiError> {
    Ok(Json(
        state
            .scenes()?
            .iter()
            .map(|s| SceneSummary {
                id: s.id.clone(),
                n_objects: s.objects.len(),
                classes: s.objects.iter().map(|o| o.class_id).collect(),
            })
            .collect(),
    ))
}

/// `round_half_up(v · 255)` per channel.
pub fn encode_png(scene: &Scene, camera: usize) -> Vec<u8> {
    let pixels: Vec<u8> = scene.images[camera]
        .iter()
        .map(|&v| (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, scene.width as u32, scene.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&pixels).expect("in-memory png data");
    }
    buf
}

async fn camera_png(
    State(state): State<Arc<AppState>>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let scene = state.scene(&id)?;
    let camera = file
        .strip_suffix(".png")
        .and_then(|c| c.parse::<usize>().ok())
        .filter(|&c| c < scene.n_cameras())
        .ok_or_else(|| ApiError::not_found(format!("no camera {file:?} in scene {id:?}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(scene, camera)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionsResponse {
    pub detections: Vec<Detection>,
    pub selected: Vec<usize>,
    pub threshold: f64,
}

async fn detections(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DetectionsResponse>, ApiError> {
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let scene = st.scene(&id)?;
        let (dets, _) = forward(&st.weights, scene)?;
        let threshold = st.explain.threshold.unwrap_or(st.weights.config().threshold);
        let selected = filter_detections(&dets, threshold)?;
        Ok(Json(DetectionsResponse {
            detections: dets,
            selected,
            threshold,
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// A query index, or the string `"all-selected"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryField {
    Index(usize),
    Keyword(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyRequest {
    pub scene_id: String,
    pub method: Method,
    #[serde(default)]
    pub query: Option<QueryField>,
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub head: Option<usize>,
    #[serde(default)]
    pub camera: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SaliencyKey {
    scene_id: String,
    method: Method,
    query: Option<usize>,
    layer: Option<usize>,
    head: Option<usize>,
    camera: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Stats {
    pub min: f32,
    pub max: f32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub scene_id: String,
    pub method: Method,
    pub cameras: Vec<usize>,
    /// One `H × W` array per entry of `cameras`.
    pub per_camera: Vec<Vec<Vec<f32>>>,
    pub queries_used: Vec<usize>,
    pub stats: Stats,
}

fn validate(state: &AppState, req: &SaliencyRequest) -> Result<SaliencyKey, ApiError> {
    let scene = state.scene(&req.scene_id)?;
    let cfg = state.weights.config();
    if (req.layer.is_some() || req.head.is_some()) && !req.method.is_raw() {
        return Err(ApiError::unprocessable(format!(
            "layer/head selection is only valid for raw attention methods, not {}",
            req.method
        )));
    }
    if let Some(l) = req.layer.filter(|&l| l >= cfg.n_layers) {
        return Err(ApiError::unprocessable(format!("layer {l} out of range (n_layers = {})", cfg.n_layers)));
    }
    if let Some(h) = req.head.filter(|&h| h >= cfg.n_heads) {
        return Err(ApiError::unprocessable(format!("head {h} out of range (n_heads = {})", cfg.n_heads)));
    }
    if let Some(c) = req.camera.filter(|&c| c >= scene.n_cameras()) {
        return Err(ApiError::unprocessable(format!("camera {c} out of range")));
    }
    let query = match &req.query {
        None => None,
        Some(QueryField::Keyword(k)) if k == "all-selected" => None,
        Some(QueryField::Keyword(k)) => {
            return Err(ApiError::unprocessable(format!(
                "query must be an index or \"all-selected\", got {k:?}"
            )))
        }
        Some(QueryField::Index(q)) if *q >= cfg.n_queries => {
            return Err(ApiError::unprocessable(format!(
                "query {q} out of range (n_queries = {})",
                cfg.n_queries
            )))
        }
        Some(QueryField::Index(q)) => Some(*q),
    };
    Ok(SaliencyKey {
        scene_id: req.scene_id.clone(),
        method: req.method,
        query,
        layer: req.layer,
        head: req.head,
        camera: req.camera,
    })
}

fn compute(state: &AppState, key: &SaliencyKey) -> Result<SaliencyResponse, ApiError> {
    let scene = state.scene(&key.scene_id)?;
    let weights = &state.weights;
    let cfg = weights.config();
    let (dets, rec) = forward(weights, scene)?;
    let opts = ExplainOptions {
        queries: key.query.map(|q| vec![q]),
        ..state.explain.clone()
    };
    let map = if key.layer.is_some() || key.head.is_some() {
        let selected = match &opts.queries {
            Some(q) => q.clone(),
            None => filter_detections(&dets, opts.threshold.unwrap_or(cfg.threshold))?,
        };
        let maps = raw_slice(&rec, key.method, key.layer, key.head)?;
        assemble(key.method, &maps, &selected, cfg, opts.upsample, None)?
    } else {
        explain_with(weights, scene, key.method, &dets, &rec, &opts)?
    };
    let cameras: Vec<usize> = match key.camera {
        Some(c) => vec![c],
        None => (0..map.per_camera.len()).collect(),
    };
    let per_camera: Vec<Vec<Vec<f32>>> = cameras
        .iter()
        .map(|&c| {
            let m = &map.per_camera[c];
            (0..m.rows).map(|r| m.row(r).iter().map(|&v| v as f32).collect()).collect()
        })
        .collect();
    let (min, max) = per_camera
        .iter()
        .flatten()
        .flatten()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(SaliencyResponse {
        scene_id: key.scene_id.clone(),
        method: key.method,
        cameras,
        per_camera,
        queries_used: map.queries_used,
        stats: Stats { min, max },
    })
}

async fn saliency(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SaliencyRequest>,
) -> Result<Response, ApiError> {
    let key = validate(&state, &req)?;
    let body = match state.cache.get(&key) {
        Some(hit) => hit.clone(),
        None => {
            let st = state.clone();
            let k = key.clone();
            let body = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ApiError> {
                let resp = compute(&st, &k)?;
                serde_json::to_vec(&resp).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
            })
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            state.cache.entry(key).or_insert_with(|| Arc::new(body)).clone()
        }
    };
    Ok(([(header::CONTENT_TYPE, "application/json")], body.as_ref().clone()).into_response())
}

#[derive(Debug, Deserialize)]
struct CurveQuery {
    method: String,
    mode: String,
}

async fn perturbation(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CurveQuery>,
) -> Result<Response, ApiError> {
    let method: Method = q.method.parse()?;
    let mode: Mode = q.mode.parse()?;
    let dir = state
        .report_dir
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no report directory configured"))?;
    let curve = load_curve(dir, method, mode)?;
    Ok(Json(curve).into_response())
}
