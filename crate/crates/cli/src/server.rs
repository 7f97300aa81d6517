//! `/v1` HTTP API: health, job submission and job polling. Jobs run one at
//! a time on a worker task; at most [`QUEUE_DEPTH`] wait behind it.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use objcomp::data::{coarsen_mask, MaskLevel};
use objcomp::diffusion::{sample_composite, SampleRequest, DEFAULT_CFG_SCALE, DEFAULT_STEPS};
use objcomp::training::TrainState;
use objcomp::{Image, Mask};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tokio::sync::mpsc;

pub const QUEUE_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
struct JobRecord {
    status: JobStatus,
    error: Option<String>,
    result: Option<Vec<u8>>,
}

struct QueuedJob {
    id: u64,
    request: SampleRequest<f32>,
}

struct Shared {
    model: TrainState<f32>,
    checkpoint_sha256: String,
    jobs: Mutex<HashMap<u64, JobRecord>>,
    next_id: AtomicU64,
    queue: mpsc::Sender<QueuedJob>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

/// Drains the job queue; spawn [`Worker::run`] once per server.
pub struct Worker {
    shared: Arc<Shared>,
    rx: mpsc::Receiver<QueuedJob>,
}

impl AppState {
    pub fn new(model: TrainState<f32>, checkpoint_sha256: String) -> (AppState, Worker) {
        let (tx, rx) = mpsc::channel(QUEUE_DEPTH);
        let shared = Arc::new(Shared {
            model,
            checkpoint_sha256,
            jobs: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            queue: tx,
        });
        (AppState(shared.clone()), Worker { shared, rx })
    }

    fn set(&self, id: u64, rec: JobRecord) {
        self.0.jobs.lock().expect("job table poisoned").insert(id, rec);
    }
}

impl Worker {
    pub async fn run(mut self) {
        let app = AppState(self.shared.clone());
        while let Some(job) = self.rx.recv().await {
            app.set(job.id, JobRecord { status: JobStatus::Running, error: None, result: None });
            let shared = self.shared.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let m = &shared.model;
                sample_composite(&job.request, &m.denoiser, &m.encoder, &m.schedule)?.to_png_bytes()
            })
            .await;
            let rec = match outcome {
                Ok(Ok(png)) => JobRecord { status: JobStatus::Done, error: None, result: Some(png) },
                Ok(Err(e)) => JobRecord { status: JobStatus::Failed, error: Some(e.to_string()), result: None },
                Err(e) => JobRecord { status: JobStatus::Failed, error: Some(format!("worker panicked: {e}")), result: None },
            };
            app.set(job.id, rec);
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/compose", post(compose))
        .route("/v1/jobs/{id}", get(job))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into(), field: Some(field) }
    }

    fn unprocessable(field: Option<&'static str>, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, message: message.into(), field }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

async fn health(State(app): State<AppState>) -> Json<Value> {
    let m = &app.0.model;
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "checkpoint_sha256": app.0.checkpoint_sha256,
        "image_size": m.denoiser.config().image_size,
        "variant": m.denoiser.config().variant,
        "timesteps": m.schedule.len(),
        "queue_depth": QUEUE_DEPTH,
    }))
}

fn png_field<T>(obj: &Map<String, Value>, field: &'static str, decode: fn(&[u8]) -> objcomp::Result<T>) -> Result<Option<T>, ApiError> {
    let Some(v) = obj.get(field) else { return Ok(None) };
    let s = v.as_str().ok_or_else(|| ApiError::bad(field, "expected a base64 PNG string"))?;
    let bytes = B64.decode(s).map_err(|e| ApiError::bad(field, format!("invalid base64: {e}")))?;
    decode(&bytes).map(Some).map_err(|e| ApiError::bad(field, format!("invalid PNG: {e}")))
}

fn required<T>(v: Option<T>, field: &'static str) -> Result<T, ApiError> {
    v.ok_or_else(|| ApiError::bad(field, "missing required field"))
}

fn uint_field(obj: &Map<String, Value>, field: &'static str) -> Result<Option<u64>, ApiError> {
    obj.get(field)
        .map(|v| v.as_u64().ok_or_else(|| ApiError::bad(field, "expected a non-negative integer")))
        .transpose()
}

const FIELDS: [&str; 8] = ["background", "object", "mask", "object_mask", "mask_level", "steps", "cfg_scale", "seed"];

/// Decodes and validates a compose payload. Malformed input is a 400;
/// well-formed input the model cannot serve (sizes, empty masks) is a 422.
pub fn parse_compose(body: &[u8], image_size: usize) -> Result<SampleRequest<f32>, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: format!("body is not valid JSON: {e}"),
        field: None,
    })?;
    let obj = value.as_object().ok_or_else(|| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: "body must be a JSON object".into(),
        field: None,
    })?;
    if let Some(k) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ApiError { status: StatusCode::BAD_REQUEST, message: format!("unknown field `{k}`"), field: None });
    }
    let background = required(png_field(obj, "background", Image::from_png_bytes)?, "background")?;
    let object = required(png_field(obj, "object", Image::from_png_bytes)?, "object")?;
    let mut mask = required(png_field(obj, "mask", Mask::from_png_bytes)?, "mask")?;
    let object_mask = png_field(obj, "object_mask", Mask::from_png_bytes)?;
    let level = uint_field(obj, "mask_level")?
        .map(|l| {
            u8::try_from(l)
                .ok()
                .and_then(|l| MaskLevel::new(l).ok())
                .ok_or_else(|| ApiError::bad("mask_level", "must be 1, 2, 3 or 4"))
        })
        .transpose()?;
    let steps = uint_field(obj, "steps")?.map_or(Ok(DEFAULT_STEPS), |s| match s {
        1..=10_000 => Ok(s as usize),
        _ => Err(ApiError::bad("steps", "must be between 1 and 10000")),
    })?;
    let cfg_scale = match obj.get("cfg_scale") {
        None => DEFAULT_CFG_SCALE,
        Some(v) => v
            .as_f64()
            .filter(|c| c.is_finite() && *c >= 0.0)
            .ok_or_else(|| ApiError::bad("cfg_scale", "must be a finite number >= 0"))?,
    };
    let seed = uint_field(obj, "seed")?.unwrap_or(0);

    if background.height() != image_size || background.width() != image_size {
        return Err(ApiError::unprocessable(
            Some("background"),
            format!("background is {}x{}, model expects {image_size}x{image_size}", background.height(), background.width()),
        ));
    }
    if mask.height() != background.height() || mask.width() != background.width() {
        return Err(ApiError::unprocessable(
            Some("mask"),
            format!("mask is {}x{}, background is {}x{}", mask.height(), mask.width(), background.height(), background.width()),
        ));
    }
    if mask.is_empty() {
        return Err(ApiError::unprocessable(Some("mask"), "mask is empty"));
    }
    if let Some(om) = &object_mask {
        if om.height() != object.height() || om.width() != object.width() {
            return Err(ApiError::unprocessable(Some("object_mask"), "object mask size differs from object image"));
        }
        if om.is_empty() {
            return Err(ApiError::unprocessable(Some("object_mask"), "object mask is empty"));
        }
    } else if object.data().iter().all(|&v| v == 0.0) {
        return Err(ApiError::unprocessable(Some("object"), "object image has no non-black pixels"));
    }
    if let Some(level) = level {
        mask = coarsen_mask(&mask, level, seed).map_err(|e| ApiError::unprocessable(Some("mask"), e.to_string()))?;
    }

    let mut req = SampleRequest::new(background, mask, object);
    req.object_mask = object_mask;
    req.steps = steps;
    req.cfg_scale = cfg_scale;
    req.seed = seed;
    req.validate().map_err(|e| ApiError::unprocessable(None, e.to_string()))?;
    Ok(req)
}

async fn compose(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request = parse_compose(&body, app.0.model.denoiser.config().image_size)?;
    let id = app.0.next_id.fetch_add(1, Ordering::Relaxed);
    app.set(id, JobRecord { status: JobStatus::Pending, error: None, result: None });
    if app.0.queue.try_send(QueuedJob { id, request }).is_err() {
        app.0.jobs.lock().expect("job table poisoned").remove(&id);
        return Err(ApiError {
            status: StatusCode::TOO_MANY_REQUESTS,
            message: format!("job queue is full ({QUEUE_DEPTH} waiting)"),
            field: None,
        });
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id.to_string(), "status": JobStatus::Pending })))
        .into_response())
}

async fn job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let not_found = || ApiError { status: StatusCode::NOT_FOUND, message: format!("no job `{id}`"), field: None };
    let key: u64 = id.parse().map_err(|_| not_found())?;
    let rec = app.0.jobs.lock().expect("job table poisoned").get(&key).cloned().ok_or_else(not_found)?;
    let mut body = json!({ "job_id": id, "status": rec.status });
    if let Some(e) = rec.error {
        body["error"] = json!(e);
    }
    if let Some(png) = rec.result {
        body["result"] = json!(B64.encode(png));
    }
    Ok(Json(body))
}
