//! JSON-over-HTTP API.
//!
//! Readers clone the current `Arc<Snapshot>` and never block each other.
//! Ingestion and pipeline runs go through a single writer lock, build a new
//! snapshot, and swap it in whole.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use tokio::sync::Mutex;

use commentlens::config::Smoothing;
use commentlens::corpus::{ingest_stream, Bucket, CorpusStore, RecordKind};
use commentlens::nel::KnowledgeBase;
use commentlens::pipeline::{run_pipeline, AnnotationSet, Models, RunOptions};
use commentlens::query::{self, parse_range, QueryError, Snapshot};

/// Mutable side of the service, guarded by the writer lock.
pub struct Writer {
    pub store: Arc<CorpusStore>,
    pub annotations: Arc<AnnotationSet>,
    pub models: Option<Models>,
    pub options: RunOptions,
    /// Where annotations are persisted; `None` keeps them in memory.
    pub annotation_dir: Option<PathBuf>,
    pub smoothing: Smoothing,
}

impl Writer {
    fn kb(&self) -> Arc<KnowledgeBase> {
        self.models
            .as_ref()
            .map(|m| m.kb.clone())
            .unwrap_or_default()
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::new(self.store.clone(), self.annotations.clone(), self.kb(), self.smoothing)
    }
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
}

impl AppState {
    pub fn new(writer: Writer) -> Arc<Self> {
        let snap = writer.snapshot();
        Arc::new(Self {
            snapshot: RwLock::new(Arc::new(snap)),
            writer: Mutex::new(writer),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    fn publish(&self, snap: Snapshot) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(snap);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/ingest/{kind}", post(ingest))
        .route("/v1/pipeline/run", post(run))
        .route("/v1/entities/search", get(search))
        .route("/v1/entities/{key}/bubbles", get(bubbles))
        .route("/v1/entities/{key}/timeline", get(timeline))
        .route("/v1/entities/{key}/pdf", get(pdf))
        .route("/v1/influencers", get(influencers))
        .route("/v1/stats", get(stats))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let code = match e {
            QueryError::UnknownEntity(_) => StatusCode::NOT_FOUND,
            QueryError::BadRequest(_) => StatusCode::BAD_REQUEST,
        };
        Self(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.0, &serde_json::json!({ "error": self.1 }))
    }
}

fn json_response<T: Serialize>(code: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("responses serialize");
    (code, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn ok<T: Serialize>(body: &T) -> Response {
    json_response(StatusCode::OK, body)
}

type Params = Query<BTreeMap<String, String>>;

fn param<'a>(q: &'a Params, name: &str) -> Option<&'a str> {
    q.get(name).map(String::as_str)
}

fn number(q: &Params, name: &str) -> Result<Option<usize>, ApiError> {
    param(q, name)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| ApiError::bad_request(format!("`{name}` must be a non-negative integer")))
        })
        .transpose()
}

async fn ingest(State(st): State<Arc<AppState>>, Path(kind): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let kind = match kind.as_str() {
        "articles" => RecordKind::Article,
        "comments" => RecordKind::Comment,
        "sites" => RecordKind::Site,
        other => {
            return Err(ApiError(
                StatusCode::NOT_FOUND,
                format!("unknown record kind `{other}` (expected articles, comments or sites)"),
            ))
        }
    };
    let mut w = st.writer.lock().await;
    let store = Arc::make_mut(&mut w.store);
    let report = ingest_stream(body.as_ref(), kind, store).map_err(|e| {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    })?;
    st.publish(w.snapshot());
    Ok(ok(&report))
}

async fn run(State(st): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let mut w = st.writer.lock().await;
    let Some(models) = w.models.clone() else {
        return Err(ApiError(
            StatusCode::CONFLICT,
            "no models are configured; start the server with a config that names them".into(),
        ));
    };
    let (store, prev, opts) = (w.store.clone(), w.annotations.clone(), w.options);
    let set = tokio::task::spawn_blocking(move || run_pipeline(&store, &models, &opts, Some(&prev)))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    if let Some(dir) = &w.annotation_dir {
        set.save(dir)
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    }
    let report = set.report.clone();
    w.annotations = Arc::new(set);
    st.publish(w.snapshot());
    Ok(ok(&report))
}

async fn search(State(st): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let text = param(&q, "q").unwrap_or_default();
    Ok(ok(&query::search(&st.snapshot(), text)?))
}

async fn bubbles(State(st): State<Arc<AppState>>, Path(key): Path<String>, q: Params) -> Result<Response, ApiError> {
    let range = parse_range(param(&q, "from"), param(&q, "to"))?;
    Ok(ok(&query::bubbles(&st.snapshot(), &key, range)?))
}

async fn timeline(State(st): State<Arc<AppState>>, Path(key): Path<String>, q: Params) -> Result<Response, ApiError> {
    let range = parse_range(param(&q, "from"), param(&q, "to"))?;
    let (window, order) = (number(&q, "window")?, number(&q, "order")?);
    Ok(ok(&query::timeline(&st.snapshot(), &key, range, window, order)?))
}

async fn pdf(State(st): State<Arc<AppState>>, Path(key): Path<String>, q: Params) -> Result<Response, ApiError> {
    let range = parse_range(param(&q, "from"), param(&q, "to"))?;
    Ok(ok(&query::pdf(&st.snapshot(), &key, range)?))
}

pub const DEFAULT_K: usize = 10;

async fn influencers(State(st): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let metric = param(&q, "metric").unwrap_or("comments_count");
    let k = number(&q, "k")?.unwrap_or(DEFAULT_K);
    Ok(ok(&query::influencers(&st.snapshot(), metric, k)?))
}

async fn stats(State(st): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let bucket: Bucket = param(&q, "bucket")
        .unwrap_or("day")
        .parse()
        .map_err(ApiError::bad_request)?;
    Ok(ok(&query::stats(&st.snapshot(), bucket)))
}
