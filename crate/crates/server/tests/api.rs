mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use commentlens::config::PipelineConfig;
use commentlens::corpus::CorpusStore;
use commentlens::pipeline::{AnnotationSet, Models, RunOptions};
use commentlens_server::api::{router, AppState, Writer};

fn app(models: Option<Models>) -> Router {
    let writer = Writer {
        store: Arc::new(CorpusStore::new()),
        annotations: Arc::new(AnnotationSet::default()),
        models,
        options: RunOptions::default(),
        annotation_dir: None,
        smoothing: Default::default(),
    };
    router(AppState::new(writer))
}

fn trained_models(dir: &std::path::Path) -> Models {
    let cfg = PipelineConfig::load(common::prepare(dir)).unwrap();
    Models::load(&cfg).unwrap()
}

async fn send(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, "GET", uri, Vec::new()).await
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn load_fixture(app: &Router) {
    for (kind, file) in [("sites", "sites.ndjson"), ("articles", "articles.ndjson"), ("comments", "comments.ndjson")] {
        let (status, body) = send(app, "POST", &format!("/v1/ingest/{kind}"), common::fixture(file)).await;
        assert_eq!(status, StatusCode::OK, "{kind}");
        assert_eq!(json(&body)["records_rejected"], 0);
    }
}

#[tokio::test]
async fn responses_match_golden_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(trained_models(dir.path())));
    load_fixture(&app).await;

    let (status, body) = send(&app, "POST", "/v1/pipeline/run", Vec::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["status"], "completed");
    let (_, body) = send(&app, "POST", "/v1/pipeline/run", Vec::new()).await;
    assert_eq!(json(&body)["status"], "skipped: up-to-date");

    for (uri, file) in [
        ("/v1/entities/Q1/bubbles", "bubbles_Q1.json"),
        ("/v1/entities/Q1/timeline?window=3&order=1", "timeline_Q1.json"),
        ("/v1/entities/Q1/pdf", "pdf_Q1.json"),
        ("/v1/influencers?metric=comments_count&k=5", "influencers_comments_count.json"),
        ("/v1/influencers?metric=h-index-likes&k=5", "influencers_h-index-likes.json"),
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::OK, "{uri}");
        assert_eq!(body, common::golden(file), "{uri}");
        assert_eq!(get(&app, uri).await.1, body, "repeat of {uri}");
    }
}

#[tokio::test]
async fn query_surface() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(trained_models(dir.path())));
    load_fixture(&app).await;
    send(&app, "POST", "/v1/pipeline/run", Vec::new()).await;

    let (_, body) = get(&app, "/v1/entities/search?q=lon").await;
    let keys: Vec<_> = json(&body)["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| h["entity_key"].as_str().unwrap().to_string())
        .collect();
    assert!(keys.contains(&"Q4".to_string()), "{keys:?}");

    let (status, body) = get(&app, "/v1/entities/surface:monday/bubbles").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["bubbles"][0]["article_count"], 1);

    let (_, body) = get(&app, "/v1/entities/Q1/bubbles?from=2016-06-21&to=2016-06-23").await;
    let b = json(&body);
    assert_eq!(b["bubbles"].as_array().unwrap().len(), 1);
    assert_eq!(b["bubbles"][0]["comment_count"], 4);

    let (_, body) = get(&app, "/v1/entities/Q1/timeline").await;
    assert!(json(&body)["notice"].is_string(), "default window 7 exceeds the 5-day grid");

    let (_, body) = get(&app, "/v1/stats?bucket=month").await;
    let s = json(&body);
    assert_eq!(s["totals"]["comments"], 12);
    assert_eq!(s["buckets"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app(None);
    let cases = [
        ("POST", "/v1/ingest/users", StatusCode::NOT_FOUND),
        ("POST", "/v1/pipeline/run", StatusCode::CONFLICT),
        ("GET", "/v1/entities/Q1/bubbles", StatusCode::NOT_FOUND),
        ("GET", "/v1/influencers?metric=karma", StatusCode::BAD_REQUEST),
        ("GET", "/v1/influencers?k=-1", StatusCode::BAD_REQUEST),
        ("GET", "/v1/stats?bucket=year", StatusCode::BAD_REQUEST),
    ];
    for (method, uri, code) in cases {
        let (status, body) = send(&app, method, uri, Vec::new()).await;
        assert_eq!(status, code, "{uri}");
        assert!(json(&body)["error"].is_string(), "{uri}");
    }
    let (status, _) = get(&app, "/v1/entities/search?q=x").await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn bad_query_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(trained_models(dir.path())));
    load_fixture(&app).await;
    send(&app, "POST", "/v1/pipeline/run", Vec::new()).await;
    for uri in [
        "/v1/entities/Q1/timeline?window=4",
        "/v1/entities/Q1/timeline?window=abc",
        "/v1/entities/Q1/bubbles?from=20-06-2016",
        "/v1/entities/Q1/pdf?from=2016-06-25&to=2016-06-20",
    ] {
        assert_eq!(get(&app, uri).await.0, StatusCode::BAD_REQUEST, "{uri}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reads_see_whole_snapshots_during_ingest() {
    let app = app(None);
    load_fixture(&app).await;
    let extra: Vec<u8> = (0..200)
        .map(|i| {
            format!(
                "{{\"comment_id\":\"x{i:03}\",\"article_id\":\"a3\",\"user_id\":\"u9\",\"body\":\"more\",\"created_at\":\"2016-06-25T10:00:00Z\",\"likes\":0,\"dislikes\":0}}\n"
            )
        })
        .collect::<String>()
        .into_bytes();

    let writer = {
        let app = app.clone();
        tokio::spawn(async move { send(&app, "POST", "/v1/ingest/comments", extra).await })
    };
    let mut readers = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        readers.push(tokio::spawn(async move {
            let mut seen = Vec::new();
            for _ in 0..20 {
                let (status, body) = get(&app, "/v1/stats").await;
                assert_eq!(status, StatusCode::OK);
                seen.push(json(&body)["totals"]["comments"].as_u64().unwrap());
            }
            seen
        }));
    }
    let (status, _) = writer.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    for r in readers {
        for n in r.await.unwrap() {
            assert!(n == 12 || n == 212, "partial snapshot with {n} comments");
        }
    }
    let (_, body) = get(&app, "/v1/stats").await;
    assert_eq!(json(&body)["totals"]["comments"], 212);
}
