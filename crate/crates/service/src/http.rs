//! HTTP/JSON API: classification and the committee labelling workflow.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use weldqa_core::nn::{self, ModelParams, DEFAULT_THRESHOLD};
use weldqa_core::pgm::read_scan_pgm;
use weldqa_core::preprocess::{to_network_input, PreprocessConfig};
use weldqa_core::{ResizeMode, Verdict};

use crate::registry::ScanRegistry;
use crate::store::{LabelStore, StoreError};

pub struct AppState {
    pub registry: ScanRegistry,
    pub store: Mutex<LabelStore>,
    pub model: Option<Arc<ModelParams>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scans/next-unlabelled", get(next_unlabelled))
        .route("/scans/{id}/image", get(scan_image))
        .route("/labels", post(post_label))
        .route("/labels/{scan_id}", get(get_label))
        .route("/classify", post(classify))
        .with_state(Arc::new(state))
}

type Shared = State<Arc<AppState>>;

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

async fn healthz(State(s): Shared) -> Response {
    Json(json!({
        "status": "ok",
        "model_loaded": s.model.is_some(),
        "scans": s.registry.len(),
    }))
    .into_response()
}

fn pgm_response(bytes: Vec<u8>, extra: HeaderMap) -> Response {
    let mut headers = extra;
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/x-portable-graymap"));
    (StatusCode::OK, headers, bytes).into_response()
}

async fn next_unlabelled(State(s): Shared) -> Response {
    let (id, record) = {
        let store = s.store.lock().expect("store lock");
        let Some(id) = s.registry.ids().find(|id| !store.has_consensus(id)) else {
            return StatusCode::NO_CONTENT.into_response();
        };
        (id.to_string(), store.get(id).cloned())
    };
    let bytes = match s.registry.bytes(&id) {
        Some(Ok(b)) => b,
        Some(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
        None => return error(StatusCode::NOT_FOUND, format!("unknown scan {id}")),
    };
    let scan = match read_scan_pgm(&bytes, &id) {
        Ok(scan) => scan,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("stored scan {id}: {e}")),
    };
    let (faultless, erroneous) = record.map_or((0, 0), |r| r.tally());
    let quorum = s.store.lock().expect("store lock").rule().quorum;
    let mut h = HeaderMap::new();
    let mut put = |name: &'static str, v: String| {
        // a seam tag that is not a valid header value is left out
        if let Ok(v) = HeaderValue::from_str(&v) {
            h.insert(name, v);
        }
    };
    put("x-scan-id", id);
    put("x-scan-width", scan.width().to_string());
    put("x-scan-height", scan.height().to_string());
    put("x-seam-type", scan.seam_type().to_string());
    put("x-votes-faultless", faultless.to_string());
    put("x-votes-erroneous", erroneous.to_string());
    put("x-quorum", quorum.to_string());
    pgm_response(bytes, h)
}

async fn scan_image(State(s): Shared, Path(id): Path<String>) -> Response {
    match s.registry.bytes(&id) {
        Some(Ok(b)) => pgm_response(b, HeaderMap::new()),
        Some(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        None => error(StatusCode::NOT_FOUND, format!("unknown scan {id}")),
    }
}

#[derive(Debug, Deserialize)]
struct VoteRequest {
    scan_id: String,
    expert_id: String,
    verdict: String,
}

#[derive(Debug, Serialize)]
struct VoteResponse {
    record: weldqa_core::CommitteeRecord,
    replaced: bool,
    previous_verdict: Option<Verdict>,
}

async fn post_label(State(s): Shared, body: Bytes) -> Response {
    let req: VoteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid vote body: {e}")),
    };
    let verdict: Verdict = match req.verdict.parse() {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if req.expert_id.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "expert_id must not be empty");
    }
    if !s.registry.contains(&req.scan_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown scan {}", req.scan_id));
    }
    let outcome = s.store.lock().expect("store lock").vote(&req.scan_id, &req.expert_id, verdict);
    match outcome {
        Ok(o) => Json(VoteResponse {
            record: o.record,
            replaced: o.replaced.is_some(),
            previous_verdict: o.replaced,
        })
        .into_response(),
        Err(e @ StoreError::Locked(_)) => error(StatusCode::CONFLICT, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn get_label(State(s): Shared, Path(scan_id): Path<String>) -> Response {
    if !s.registry.contains(&scan_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown scan {scan_id}"));
    }
    let record = s
        .store
        .lock()
        .expect("store lock")
        .get(&scan_id)
        .cloned()
        .unwrap_or_else(|| weldqa_core::CommitteeRecord::new(&scan_id));
    Json(record).into_response()
}

#[derive(Debug, Deserialize)]
struct ClassifyQuery {
    mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Probabilities {
    pub faultless: f64,
    pub erroneous: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub verdict: Verdict,
    pub probabilities: Probabilities,
    pub latency_ms: f64,
}

/// Preprocessing matched to the model's input side, so models trained at a
/// reduced side (tests, quick experiments) are served the same way.
pub fn preprocess_for(model: &ModelParams, mode: ResizeMode) -> PreprocessConfig {
    let side = model.input_shape().1;
    let cfg = PreprocessConfig::new(mode);
    if side == cfg.target {
        cfg
    } else {
        cfg.with_target_override(side)
    }
}

/// Full chain from PGM bytes to a verdict.
pub fn classify_bytes(model: &ModelParams, bytes: &[u8], mode: ResizeMode) -> weldqa_core::Result<ClassifyResponse> {
    let start = Instant::now();
    let scan = read_scan_pgm(bytes, "request")?;
    let img = to_network_input(&scan, &preprocess_for(model, mode))?;
    let p = nn::forward(model, &img)?;
    let verdict = nn::decide(p, DEFAULT_THRESHOLD)?;
    Ok(ClassifyResponse {
        verdict,
        probabilities: Probabilities {
            faultless: p[0],
            erroneous: p[1],
        },
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn classify(State(s): Shared, Query(q): Query<ClassifyQuery>, body: Bytes) -> Response {
    let mode = match q.mode.as_deref().unwrap_or("scale").parse::<ResizeMode>() {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let Some(model) = s.model.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    };
    let result = tokio::task::spawn_blocking(move || classify_bytes(&model, &body, mode)).await;
    match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
