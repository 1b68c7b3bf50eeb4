use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use simsr_cli::service::{cors_layer, router, AppState};
use simsr_core::evalharness::{make_synthetic, SyntheticConfig};
use simsr_core::{CandidatePool, EncoderModel, Engine};

fn state() -> Arc<AppState> {
    let corpus = make_synthetic(&SyntheticConfig::default()).unwrap();
    let model = EncoderModel::random(1 << 12, 16, 7, 3, 0.5).unwrap();
    let pool = CandidatePool::build(&corpus.replies(), &model).unwrap();
    Arc::new(AppState::new(Engine::new(model, pool).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn post(body: &str) -> Request<Body> {
    Request::post("/suggest")
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap()
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[tokio::test]
async fn suggest_returns_k_distinct_replies() {
    let app = router(state(), None);
    let (status, body) = call(&app, post(r#"{"message":"how are you?"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let replies = body["replies"].as_array().unwrap();
    assert_eq!(replies.len(), 3);
    let distinct: std::collections::HashSet<_> = replies.iter().map(|r| r.as_str().unwrap()).collect();
    assert_eq!(distinct.len(), 3);
    let total: f64 = body["simulation"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(body["tuples_evaluated"], 114);
    assert!(body["timings"]["total_ms"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn exhaustive_override_evaluates_every_triple() {
    let app = router(state(), None);
    let req = r#"{"message":"hi","overrides":{"strategy":"exhaustive","n":15,"k":3}}"#;
    let (status, body) = call(&app, post(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tuples_evaluated"], 455);
    assert_eq!(body["system"], "simsr-exhaustive");
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = router(state(), None);
    for body in [
        r#"{"message":""}"#,
        r#"{"message":"   "}"#,
        r#"{"message":"hi""#,
        r#"{"msg":"hi"}"#,
        r#"{"message":"hi","overrides":{"k":0}}"#,
        r#"{"message":"hi","overrides":{"k":5,"n":4}}"#,
        r#"{"message":"hi","overrides":{"k":1000}}"#,
        r#"{"message":"hi","overrides":{"m":1000}}"#,
        r#"{"message":"hi","overrides":{"tau":0}}"#,
        r#"{"message":"hi","overrides":{"strategy":"best"}}"#,
        r#"{"message":"hi","overrides":{"kay":3}}"#,
        "not json",
    ] {
        let (status, resp) = call(&app, post(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(resp["error"].as_str().is_some_and(|e| !e.is_empty()), "{body}");
    }
    let (_, resp) = call(&app, post(r#"{"message":"hi","overrides":{"k":1000}}"#)).await;
    assert!(resp["error"].as_str().unwrap().contains("K exceeds pool"));
}

#[tokio::test]
async fn identical_requests_give_identical_responses() {
    let app = router(state(), None);
    let req =
        r#"{"message":"see you later","persona":["i like dogs"],"overrides":{"strategy":"sample_rank","seed":9}}"#;
    let (_, a) = call(&app, post(req)).await;
    let (_, b) = call(&app, post(req)).await;
    assert_eq!(without_timings(a), without_timings(b));
}

#[tokio::test]
async fn persona_changes_the_encoded_message() {
    let app = router(state(), None);
    let (_, plain) = call(&app, post(r#"{"message":"see you later"}"#)).await;
    let (_, persona) = call(&app, post(r#"{"message":"see you later","persona":["zz qq"]}"#)).await;
    assert_ne!(plain["shortlist"], persona["shortlist"]);
}

#[tokio::test]
async fn concurrent_requests_match_serial() {
    let app = router(state(), None);
    let bodies: Vec<String> = (0..16)
        .map(|i| {
            format!(
                r#"{{"message":"message number {i}","overrides":{{"strategy":"{}"}}}}"#,
                ["simsr", "greedy", "mmr", "topic"][i % 4]
            )
        })
        .collect();
    let mut serial = Vec::new();
    for b in &bodies {
        serial.push(without_timings(call(&app, post(b)).await.1));
    }
    let handles: Vec<_> = bodies
        .iter()
        .map(|b| {
            let app = app.clone();
            let b = b.clone();
            tokio::spawn(async move { without_timings(call(&app, post(&b)).await.1) })
        })
        .collect();
    for (h, want) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), want);
    }
}

#[tokio::test]
async fn health_and_config() {
    let app = router(state(), None);
    let (status, body) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!("ok"));
    let (status, cfg) = call(&app, Request::get("/config").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cfg["k"], 3);
    assert_eq!(cfg["n"], 15);
    assert_eq!(cfg["m"], 25);
    assert_eq!(cfg["tau"], 10.0);
    assert_eq!(cfg["strategy"], "simsr");
    assert_eq!(cfg["pool_size"], 120);
    assert_eq!(cfg["systems"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn cors_headers_when_enabled() {
    let app = router(state(), Some(cors_layer(&["http://localhost:5173".into()]).unwrap()));
    let req = Request::get("/health")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
    let plain = router(state(), None);
    let req = Request::get("/health")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = plain.oneshot(req).await.unwrap();
    assert!(resp.headers().get("access-control-allow-origin").is_none());
}

#[test]
fn internal_errors_are_opaque() {
    use simsr_cli::service::ApiError;
    let e = ApiError::from(simsr_core::Error::NonFinite);
    assert_eq!(e.status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(e.body.error, "internal error");
    assert_eq!(e.body.id.as_ref().unwrap().len(), 36);
    let e = ApiError::from(simsr_core::Error::KExceedsPool { k: 9, pool: 2 });
    assert_eq!(e.status, StatusCode::BAD_REQUEST);
}
