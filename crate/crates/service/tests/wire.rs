use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use spectool_core::sim::ManualClock;
use spectool_core::{canonical_key, ToolCall};
use spectool_service::{router, AppState, DEFAULT_BODY_LIMIT};
use tower::ServiceExt;

fn state() -> (AppState, ManualClock) {
    let clock = ManualClock::new();
    (AppState::new(Arc::new(clock.clone())), clock)
}

async fn post(state: &AppState, rid: &str, body: impl Into<Body>) -> (StatusCode, String) {
    post_limited(state, rid, body, DEFAULT_BODY_LIMIT).await
}

async fn post_limited(state: &AppState, rid: &str, body: impl Into<Body>, limit: usize) -> (StatusCode, String) {
    let req = Request::post(format!("/cache-tool-output/{rid}")).header("content-type", "application/json").body(body.into()).unwrap();
    let resp = router(state.clone(), limit).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

const ONE: &str = r#"[{"name":"search","params":{"q":"rust"},"output":"results"}]"#;

fn key() -> spectool_core::CanonicalKey {
    canonical_key(&ToolCall::new("search").arg("q", "rust")).unwrap()
}

#[tokio::test]
async fn single_entry_is_cached() {
    let (st, _) = state();
    let (code, body) = post(&st, "resp-1", ONE).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body, r#"{"cached": 1}"#);
    let store = st.store.lock().unwrap();
    assert_eq!(store.lookup_key("resp-1", &key(), 0.0).unwrap().output, "results");
}

#[tokio::test]
async fn empty_array() {
    let (st, _) = state();
    assert_eq!(post(&st, "r", "[]").await, (StatusCode::OK, r#"{"cached": 0}"#.to_string()));
}

#[tokio::test]
async fn partial_acceptance_reports_rejections() {
    let (st, _) = state();
    let body = r#"[{"name":"search","params":{"q":"a"},"output":"x"},{"name":"search","params":{"q":"b"}}]"#;
    let (code, text) = post(&st, "r", body).await;
    assert_eq!(code, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["cached"], 1);
    assert_eq!(v["rejected"][0]["index"], 1);
    assert!(v["rejected"][0]["error"].as_str().unwrap().contains("output"));
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (st, _) = state();
    for body in ["{not json", r#"{"name":"x"}"#, "42"] {
        let (code, text) = post(&st, "r", body).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{body}");
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn oversized_body_is_413() {
    let (st, _) = state();
    let big = format!(r#"[{{"name":"search","output":"{}"}}]"#, "x".repeat(4096));
    let (code, _) = post_limited(&st, "r", big, 1024).await;
    assert_eq!(code, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn keep_alive_expires() {
    let (st, clock) = state();
    let body = r#"[{"name":"search","params":{"q":"rust"},"output":"results","keep_alive":0.1}]"#;
    assert_eq!(post(&st, "r", body).await.1, r#"{"cached": 1}"#);
    clock.advance(0.05);
    assert!(st.store.lock().unwrap().lookup_key("r", &key(), clock.now_secs()).is_some());
    clock.advance(0.15);
    assert!(st.store.lock().unwrap().lookup_key("r", &key(), clock.now_secs()).is_none());
}

#[tokio::test]
async fn resubmission_is_idempotent() {
    let (st, _) = state();
    let body = r#"[{"name":"search","params":{"q":"rust"},"output":"results"},{"name":"fetch","output":{"k":1}}]"#;
    let first = post(&st, "r", body).await;
    let len = st.store.lock().unwrap().len();
    let second = post(&st, "r", body).await;
    assert_eq!(first, second);
    assert_eq!(st.store.lock().unwrap().len(), len);
    let store = st.store.lock().unwrap();
    assert_eq!(store.lookup_name("r", "fetch", 0.0).unwrap().output, r#"{"k":1}"#);
    assert!(store.lookup_key("r", &key(), 0.0).is_some());
}

#[tokio::test]
async fn nested_params_rejected() {
    let (st, _) = state();
    let body = r#"[{"name":"search","params":{"q":{"deep":1}},"output":"x"}]"#;
    let v: serde_json::Value = serde_json::from_str(&post(&st, "r", body).await.1).unwrap();
    assert_eq!(v["cached"], 0);
    assert_eq!(v["rejected"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn healthz() {
    let (st, _) = state();
    let resp = router(st, DEFAULT_BODY_LIMIT).oneshot(Request::get("/healthz").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

trait NowSecs {
    fn now_secs(&self) -> f64;
}

impl NowSecs for ManualClock {
    fn now_secs(&self) -> f64 {
        spectool_core::sim::Clock::now(self)
    }
}
