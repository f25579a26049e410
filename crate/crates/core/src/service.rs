//! HTTP service: sessions hold an image, a filter and the compressed echoes
//! of that filter; echoes are reconstructed on demand from the factors.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::compression::{compress_echoes, CompressedEchoes, CompressionConfig};
use crate::display::{rescale_for_display, RescaleMode};
use crate::echo::Direction;
use crate::error::Error;
use crate::filters::{build_filter, FilterSpec};
use crate::image::Image;
use crate::pgm::decode_pgm;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    /// Sessions whose predicted compression working set exceeds this are
    /// refused with 507.
    pub memory_budget_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: 4,
            memory_budget_bytes: 256 << 20,
        }
    }
}

/// Probe block, basis and projected block of the rangefinder, in bytes.
pub fn predicted_working_set(n: usize, width: usize) -> usize {
    3usize.saturating_mul(n).saturating_mul(width).saturating_mul(8)
}

pub struct Session {
    pub id: String,
    pub original: Image,
    pub filtered: Image,
    pub filter: FilterSpec,
    pub compressed: CompressedEchoes,
    pub created: SystemTime,
}

/// Most recently used session at the back.
struct SessionStore {
    capacity: usize,
    sessions: VecDeque<Arc<Session>>,
}

impl SessionStore {
    fn get(&mut self, id: &str) -> Option<Arc<Session>> {
        let pos = self.sessions.iter().position(|s| s.id == id)?;
        let s = self.sessions.remove(pos)?;
        self.sessions.push_back(s.clone());
        Some(s)
    }

    fn insert(&mut self, s: Arc<Session>) {
        self.sessions.push_back(s);
        while self.sessions.len() > self.capacity.max(1) {
            self.sessions.pop_front();
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: ServiceConfig,
    store: Arc<Mutex<SessionStore>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config,
            store: Arc::new(Mutex::new(SessionStore {
                capacity: config.max_sessions,
                sessions: VecDeque::new(),
            })),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.store
            .lock()
            .expect("session store poisoned")
            .get(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Argument(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Parse(_) | Error::Format(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/echo", get(get_echo))
        .route("/sessions/{id}/cumulative", get(get_cumulative).post(get_cumulative))
        .route("/sessions/{id}/spectrum", get(get_spectrum))
        .route("/sessions/{id}/image", get(get_image))
        .layer(DefaultBodyLimit::max(64 << 20))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(addr: &str, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(State(state): State<AppState>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let (mut image, mut filter, mut compression) = (None, None, None);
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or("").to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| bad_request(format!("unreadable field {name}: {e}")))?;
        match name.as_str() {
            "image" => image = Some(bytes),
            "filter" => filter = Some(bytes),
            "compression" => compression = Some(bytes),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| bad_request("missing image field"))?;
    if image.is_empty() {
        return Err(bad_request("empty image upload"));
    }
    let original = decode_pgm(&image).map_err(|e| bad_request(e.to_string()))?;
    let filter: FilterSpec = serde_json::from_slice(&filter.ok_or_else(|| bad_request("missing filter field"))?)
        .map_err(|e| json_error("filter", e))?;
    let cfg: CompressionConfig = match compression {
        Some(b) if !b.is_empty() => serde_json::from_slice(&b).map_err(|e| json_error("compression", e))?,
        _ => CompressionConfig::default(),
    };
    cfg.validate()?;
    let n = original.len();
    let k = cfg.resolve_rank(n)?;
    let width = (k + cfg.oversample).min(n);
    let need = predicted_working_set(n, width);
    if need > state.config.memory_budget_bytes {
        return Err(ApiError(
            StatusCode::INSUFFICIENT_STORAGE,
            format!(
                "rank {k} + oversampling {} needs about {} MiB, budget is {} MiB",
                cfg.oversample,
                need >> 20,
                state.config.memory_budget_bytes >> 20
            ),
        ));
    }
    let session = blocking(move || {
        let (filtered, op) = build_filter(&original, &filter)?;
        let mut compressed = compress_echoes(&op, original.nx(), original.ny(), 1, &cfg)?;
        compressed.metadata = json!({"filter": filter, "compression": cfg});
        Ok(Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            original,
            filtered,
            filter,
            compressed,
            created: SystemTime::now(),
        })
    })
    .await?;
    let body = json!({
        "id": session.id,
        "nx": session.original.nx(),
        "ny": session.original.ny(),
        "filter": session.filter.label(),
        "filter_spec": session.filter,
        "k": session.compressed.rank(),
        "exclusions": session.compressed.exclusions.len(),
        "spectrum_url": format!("/sessions/{}/spectrum", session.id),
        "stats": session.compressed.stats,
    });
    state.store.lock().expect("session store poisoned").insert(Arc::new(session));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn json_error(field: &str, e: serde_json::Error) -> ApiError {
    use serde_json::error::Category;
    let status = match e.classify() {
        Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    };
    ApiError(status, format!("invalid {field} config: {e}"))
}

fn encode_raw(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

/// Raster, raw values and their range.
#[derive(Debug, Serialize, Deserialize)]
pub struct RasterResponse {
    pub nx: usize,
    pub ny: usize,
    /// Base64 8-bit grey raster, row-major.
    pub raster: String,
    /// Base64 little-endian f64 values.
    pub raw: String,
    pub raw_max: f64,
    pub raw_min: f64,
}

fn raster_response(nx: usize, ny: usize, raw: &[f64], mode: RescaleMode) -> Result<RasterResponse, ApiError> {
    let raster = rescale_for_display(&[raw], mode)?.pop().expect("one raster");
    Ok(RasterResponse {
        nx,
        ny,
        raster: B64.encode(raster),
        raw: encode_raw(raw),
        raw_max: raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        raw_min: raw.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Deserialize)]
pub struct EchoQuery {
    x: usize,
    y: usize,
    #[serde(default)]
    direction: Direction,
    rank: Option<usize>,
    #[serde(default)]
    rescale: RescaleMode,
}

fn checked_index(s: &Session, x: usize, y: usize) -> Result<usize, ApiError> {
    let (nx, ny) = (s.compressed.nx, s.compressed.ny);
    if x >= nx || y >= ny {
        return Err(bad_request(format!("pixel ({x}, {y}) outside {nx}x{ny} image")));
    }
    Ok(y * nx + x)
}

fn checked_rank(s: &Session, rank: Option<usize>) -> Result<usize, ApiError> {
    match rank {
        Some(r) if r > s.compressed.rank() => Err(bad_request(format!("rank {r} exceeds k = {}", s.compressed.rank()))),
        Some(r) => Ok(r),
        None => Ok(s.compressed.rank()),
    }
}

fn reconstruct(s: &Session, index: usize, direction: Direction, rank: usize) -> Result<Vec<f64>, ApiError> {
    Ok(match direction {
        Direction::Source => s.compressed.reconstruct_source(index, Some(rank))?,
        Direction::Drain => s.compressed.reconstruct_drain(index, Some(rank))?,
    })
}

async fn get_echo(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<EchoQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| bad_request(e.body_text()))?;
    let s = state.session(&id)?;
    let index = checked_index(&s, q.x, q.y)?;
    let rank = checked_rank(&s, q.rank)?;
    let body = blocking(move || {
        let raw = reconstruct(&s, index, q.direction, rank)?;
        let r = raster_response(s.compressed.nx, s.compressed.ny, &raw, q.rescale)?;
        Ok(json!({
            "raster": r.raster, "raw": r.raw, "raw_max": r.raw_max, "raw_min": r.raw_min,
            "nx": r.nx, "ny": r.ny,
            "location": {"x": q.x, "y": q.y, "index": index},
            "direction": q.direction, "rank": rank,
            "excluded": s.compressed.is_excluded(index),
        }))
    })
    .await?;
    Ok(Json(body).into_response())
}

#[derive(Debug, Deserialize)]
pub struct CumulativeBody {
    pixels: Vec<(usize, usize)>,
    #[serde(default)]
    direction: Direction,
    rank: Option<usize>,
    #[serde(default)]
    rescale: RescaleMode,
}

async fn get_cumulative(State(state): State<AppState>, Path(id): Path<String>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let b: CumulativeBody = serde_json::from_slice(&body).map_err(|e| bad_request(format!("invalid body: {e}")))?;
    let s = state.session(&id)?;
    if b.pixels.is_empty() {
        return Err(bad_request("pixel list is empty"));
    }
    let idx = b
        .pixels
        .iter()
        .map(|&(x, y)| checked_index(&s, x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let rank = checked_rank(&s, b.rank)?;
    let out = blocking(move || {
        let mut sum = vec![0.0; s.compressed.dim()];
        for &i in &idx {
            for (a, v) in sum.iter_mut().zip(reconstruct(&s, i, b.direction, rank)?) {
                *a += v;
            }
        }
        let r = raster_response(s.compressed.nx, s.compressed.ny, &sum, b.rescale)?;
        Ok(json!({
            "raster": r.raster, "raw": r.raw, "raw_max": r.raw_max, "raw_min": r.raw_min,
            "nx": r.nx, "ny": r.ny, "count": idx.len(), "direction": b.direction, "rank": rank,
        }))
    })
    .await?;
    Ok(Json(out).into_response())
}

async fn get_spectrum(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = state.session(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], s.compressed.spectrum_csv()).into_response())
}

#[derive(Debug, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
enum Which {
    #[default]
    Original,
    Filtered,
}

#[derive(Debug, Deserialize)]
pub struct ImageQuery {
    #[serde(default)]
    which: Which,
}

async fn get_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<ImageQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| bad_request(e.body_text()))?;
    let s = state.session(&id)?;
    let img = match q.which {
        Which::Original => &s.original,
        Which::Filtered => &s.filtered,
    };
    let raster: Vec<u8> = img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(Json(json!({
        "nx": img.nx(), "ny": img.ny(),
        "raster": B64.encode(raster),
        "raw": encode_raw(img.data()),
        "raw_max": img.max(), "raw_min": img.min(),
    }))
    .into_response())
}
