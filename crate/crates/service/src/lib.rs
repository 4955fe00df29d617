//! HTTP front end for the engine's tool cache.
//!
//! `POST /cache-tool-output/{response_id}` takes a JSON array of
//! `{name, params?, output, keep_alive?}` entries and stores each valid one
//! under the given response id. The reply is `{"cached": n}`; entries that
//! fail validation are listed under an extra `rejected` field.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::{json, Map, Value};
use spectool_core::engine::{Submission, ToolCacheStore};
use spectool_core::sim::Clock;
use spectool_core::ToolCall;

pub const DEFAULT_BODY_LIMIT: usize = 1 << 20;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Mutex<ToolCacheStore>>,
    pub clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { store: Arc::new(Mutex::new(ToolCacheStore::new())), clock }
    }
}

pub fn router(state: AppState, body_limit: usize) -> Router {
    Router::new()
        .route("/cache-tool-output/{response_id}", post(cache_tool_output))
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState, body_limit: usize) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, state, body_limit).await
}

/// Serves on an already bound listener, e.g. one on an ephemeral port.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState, body_limit: usize) -> std::io::Result<()> {
    axum::serve(listener, router(state, body_limit)).await
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn bad_request(msg: impl Into<String>) -> Response {
    json_response(StatusCode::BAD_REQUEST, json!({ "error": msg.into() }).to_string())
}

/// Checks one wire entry and turns it into a store submission.
pub fn parse_entry(v: &Value) -> Result<Submission, String> {
    let obj = v.as_object().ok_or("entry is not an object")?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "name" | "params" | "output" | "keep_alive")) {
        return Err(format!("unknown field `{k}`"));
    }
    let name = match obj.get("name") {
        Some(Value::String(s)) if !s.is_empty() => s.as_str(),
        Some(Value::String(_)) => return Err("`name` is empty".into()),
        Some(_) => return Err("`name` must be a string".into()),
        None => return Err("missing `name`".into()),
    };
    let output = match obj.get("output") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => return Err("missing `output`".into()),
    };
    let keep_alive = match obj.get("keep_alive") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(k) if k.is_finite() && k >= 0.0 => Some(k),
            _ => return Err("`keep_alive` must be a non-negative number".into()),
        },
    };
    match obj.get("params") {
        None | Some(Value::Null) => Ok(Submission::name_only(name, output, keep_alive)),
        Some(Value::Object(params)) => params_submission(name, params, output, keep_alive),
        Some(_) => Err("`params` must be an object".into()),
    }
}

fn params_submission(name: &str, params: &Map<String, Value>, output: String, keep_alive: Option<f64>) -> Result<Submission, String> {
    let call = ToolCall::from_json_args(name, params).map_err(|e| e.to_string())?;
    Submission::from_call(&call, output, keep_alive).map_err(|e| e.to_string())
}

async fn cache_tool_output(State(state): State<AppState>, Path(response_id): Path<String>, body: Bytes) -> Response {
    let parsed: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return bad_request(format!("malformed JSON: {e}")),
    };
    let Value::Array(entries) = parsed else {
        return bad_request("body must be a JSON array");
    };
    let mut subs = Vec::with_capacity(entries.len());
    let mut rejected = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        match parse_entry(e) {
            Ok(s) => subs.push(s),
            Err(msg) => rejected.push(json!({ "index": i, "error": msg })),
        }
    }
    let now = state.clock.now();
    let cached: usize = {
        let mut store = state.store.lock().expect("store lock");
        store.expire(now);
        subs.into_iter().map(|s| store.submit(&response_id, s, now)).sum()
    };
    // the count-only shape is part of the contract, so write it by hand
    let body = if rejected.is_empty() {
        format!("{{\"cached\": {cached}}}")
    } else {
        format!("{{\"cached\": {cached}, \"rejected\": {}}}", Value::Array(rejected))
    };
    json_response(StatusCode::OK, body)
}
