mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use qdtile::{AdjacencyRules, FeatureConfig, TileCatalog};
use qdtile_cli::service::{router, AppState};

fn state() -> Arc<AppState> {
    let catalog = TileCatalog::representative();
    let rules = AdjacencyRules::representative(&catalog).unwrap();
    let ck = common::checkpoint(&catalog);
    Arc::new(AppState::new(catalog, rules, ck, FeatureConfig::default()).unwrap())
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn health_reports_checkpoint() {
    let s = state();
    let (st, v) = call(&s, "GET", "/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["checkpoint_hash"], s.checkpoint.hash());
    assert_eq!(v["width"], 12);
    assert_eq!(v["schema_version"], 1);
}

#[tokio::test]
async fn catalog_lists_seven_categories() {
    let s = state();
    let (st, v) = call(&s, "GET", "/catalog", None).await;
    assert_eq!(st, StatusCode::OK);
    let cats = v["categories"].as_array().unwrap();
    assert_eq!(cats.len(), 7);
    let tokens: Vec<&str> = cats.iter().map(|c| c["token"].as_str().unwrap()).collect();
    assert_eq!(tokens, ["A", "B", "C", "D", "E", "F", "G"]);
    assert_eq!(v["tiles"].as_array().unwrap().len(), s.catalog.len());
}

#[tokio::test]
async fn generate_is_deterministic() {
    let s = state();
    let body = json!({"schema_version": 1, "prompt": "many parks, low privacy", "seed": 42});
    let (st, a) = call(&s, "POST", "/generate", Some(body.clone())).await;
    assert_eq!(st, StatusCode::OK, "{a}");
    let (_, b) = call(&s, "POST", "/generate", Some(body)).await;
    assert_eq!(a, b);
    let labels = &a["result"]["labels"];
    assert_eq!(labels[0], "high");
    assert_eq!(labels[4], "low");
    let (_, c) = call(&s, "POST", "/generate", Some(json!({"prompt": "many parks, low privacy", "seed": 43}))).await;
    assert_ne!(a["result"], c["result"]);
}

#[tokio::test]
async fn generate_accepts_explicit_labels() {
    let s = state();
    let body = json!({"labels": ["low", null, "high", "mid", null], "seed": 1});
    let (st, v) = call(&s, "POST", "/generate", Some(body)).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["result"]["labels"][0], "low");
    assert_eq!(v["result"]["labels"][2], "high");
}

#[tokio::test]
async fn bad_requests_name_the_field() {
    let s = state();
    let cases = [
        (json!({"temperature": -1.0}), "temperature"),
        (json!({"top_k": 0}), "top_k"),
        (json!({"schema_version": 9}), "schema_version"),
        (json!({"prompt": "purple parks"}), "prompt"),
        (json!({"labels": ["low"]}), "labels"),
        (json!({"seed": "x"}), "seed"),
        (json!({"labels": [null, null, null, null, null], "prompt": "few parks"}), "prompt"),
    ];
    for (body, field) in cases {
        let (st, v) = call(&s, "POST", "/generate", Some(body.clone())).await;
        assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["field"].as_str().unwrap().starts_with(field), "{body} -> {v}");
        assert!(!v["error"].as_str().unwrap().is_empty());
    }
    let (st, v) = call(&s, "POST", "/generate", Some(json!({"colour": 3}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("colour"));
}

#[tokio::test]
async fn regenerate_keeps_tiles_outside_region() {
    let s = state();
    let base = common::solved_layout(&s.catalog, &s.rules);
    let region = json!({"row": 2, "col": 3, "height": 1, "width": 1});
    let mut valid = 0;
    for seed in 0..60u64 {
        let body = json!({"base_layout": base, "region": region, "seed": seed, "restarts": 3});
        let (st, v) = call(&s, "POST", "/regenerate", Some(body)).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        let r = &v["result"];
        if r["validity"] == true {
            valid += 1;
            let tiles = r["detailed"]["tiles"].as_array().unwrap();
            for (i, t) in tiles.iter().enumerate() {
                let (row, col) = (i / 12, i % 12);
                let inside = (row, col) == (2, 3);
                if !inside {
                    assert_eq!(t.as_u64().unwrap() as usize, base.tiles[i].index(), "cell {i}");
                }
            }
        }
    }
    assert!(valid > 0, "no regeneration succeeded");
}

#[tokio::test]
async fn regenerate_rejects_bad_inputs() {
    let s = state();
    let base = common::solved_layout(&s.catalog, &s.rules);
    let (st, v) = call(
        &s,
        "POST",
        "/regenerate",
        Some(json!({"base_layout": base, "region": {"row": 7, "col": 0, "height": 2, "width": 1}})),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "region");

    let mut broken = base.clone();
    broken.tiles.truncate(10);
    let (st, v) = call(
        &s,
        "POST",
        "/regenerate",
        Some(json!({"base_layout": broken, "region": {"row": 1, "col": 1, "height": 1, "width": 1}})),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "{v}");
    assert!(v["field"].as_str().unwrap().starts_with("base_layout"), "{v}");
}
