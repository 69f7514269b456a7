mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use weaksift::server::{router, TOKEN_HEADER};
use weaksift_core::pipeline::{InputFormat, Pipeline};
use weaksift_core::service::AnnotationService;

/// A fitted workspace with a selected batch, served without a token unless
/// one is given.
fn app(token: Option<&str>, select: bool) -> (common::Inputs, Router) {
    let inputs = common::inputs(300, 1, token);
    let pipeline = Pipeline::open(inputs.config.clone()).unwrap();
    pipeline.ingest(&inputs.corpus_path, InputFormat::Jsonl).unwrap();
    pipeline.fit().unwrap();
    if select {
        pipeline.select().unwrap();
    }
    let app = router(AnnotationService::new(pipeline).unwrap());
    (inputs, app)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_labels(body: impl Into<Body>) -> Request<Body> {
    Request::post("/api/labels")
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap()
}

fn label(doc_id: &str, label: Value) -> Value {
    json!({ "doc_id": doc_id, "label": label, "annotator": "a1", "client_timestamp": "2024-03-01T12:00:00Z" })
}

#[tokio::test]
async fn queue_serves_ranked_items() {
    let (_inputs, app) = app(None, true);
    let (status, body) = call(&app, get("/api/queue?limit=5")).await;
    assert_eq!(status, StatusCode::OK);
    let items = body.as_array().unwrap();
    assert_eq!(items.len(), 5);
    let ranks: Vec<u64> = items.iter().map(|i| i["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [1, 2, 3, 4, 5]);
    assert!(items[0]["p"].is_number());
    assert!(items[0]["title"].is_string());
}

#[tokio::test]
async fn bad_limits_are_rejected() {
    let (_inputs, app) = app(None, true);
    for uri in ["/api/queue?limit=0", "/api/queue?limit=abc", "/api/queue?limit=-3"] {
        let (status, body) = call(&app, get(uri)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn queue_without_batch_conflicts() {
    let (_inputs, app) = app(None, false);
    let (status, body) = call(&app, get("/api/queue?limit=5")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body, json!({ "error": "no active batch" }));
}

#[tokio::test]
async fn labels_are_acknowledged_per_item() {
    let (_inputs, app) = app(None, true);
    let (_, queue) = call(&app, get("/api/queue?limit=2")).await;
    let first = queue[0]["doc_id"].as_str().unwrap().to_string();
    let body = json!({ "labels": [label(&first, json!(1)), label("nope", json!(0)), label(&first, json!(7))] });
    let (status, acks) = call(&app, post_labels(body.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let statuses: Vec<&str> = acks["results"].as_array().unwrap().iter().map(|a| a["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["ok", "error", "error"]);
    assert!(acks["results"][1]["reason"].is_string());

    let (_, after) = call(&app, get("/api/queue?limit=1")).await;
    assert_ne!(after[0]["doc_id"].as_str().unwrap(), first);
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let (_inputs, app) = app(None, true);
    for body in ["", "{", "{\"labels\": 3}", "[]"] {
        let (status, resp) = call(&app, post_labels(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body:?}");
        assert!(resp["error"].is_string());
    }
}

#[tokio::test]
async fn submissions_during_advancement_are_unavailable() {
    let (inputs, app) = app(None, true);
    let (_, queue) = call(&app, get("/api/queue?limit=1")).await;
    let id = queue[0]["doc_id"].as_str().unwrap();
    let lock = Pipeline::open(inputs.config.clone()).unwrap().workspace.lock_path();
    std::fs::write(&lock, b"").unwrap();
    let body = json!({ "labels": [label(id, json!(1))] });
    let (status, resp) = call(&app, post_labels(body.to_string())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(resp, json!({ "error": "round advancing" }));
}

#[tokio::test]
async fn status_reports_progress() {
    let (_inputs, app) = app(None, true);
    let (status, before) = call(&app, get("/api/status")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before["round"], 0);
    assert_eq!(before["annotated_total"], 0);
    assert_eq!(before["batch_remaining"], 100);
    let (_, queue) = call(&app, get("/api/queue?limit=3")).await;
    let labels: Vec<Value> = queue.as_array().unwrap().iter().map(|i| label(i["doc_id"].as_str().unwrap(), json!(0))).collect();
    call(&app, post_labels(json!({ "labels": labels }).to_string())).await;
    let (_, after) = call(&app, get("/api/status")).await;
    assert_eq!(after["annotated_total"], 3);
    assert_eq!(after["batch_remaining"], 97);
}

#[tokio::test]
async fn document_lookup_and_unknown_ids() {
    let (inputs, app) = app(None, true);
    let id = inputs.corpus.truth.keys().next().unwrap();
    let (status, doc) = call(&app, get(&format!("/api/doc/{id}"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["doc_id"].as_str().unwrap(), id);
    let (status, body) = call(&app, get("/api/doc/not-a-document")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn token_is_required_when_configured() {
    let (_inputs, app) = app(Some("s3cret"), true);
    let (status, _) = call(&app, get("/api/status")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let wrong = Request::get("/api/status").header(TOKEN_HEADER, "guess").body(Body::empty()).unwrap();
    assert_eq!(call(&app, wrong).await.0, StatusCode::UNAUTHORIZED);
    let right = Request::get("/api/status").header(TOKEN_HEADER, "s3cret").body(Body::empty()).unwrap();
    assert_eq!(call(&app, right).await.0, StatusCode::OK);
}
