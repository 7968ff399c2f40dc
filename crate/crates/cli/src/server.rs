//! Read-only HTTP service over a committed index.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use entmark_core::index::{Index, QuerySpec, StringMode, Thresholds, DEFAULT_LIMIT, MAX_LIMIT};

type Params = Query<HashMap<String, String>>;

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<entmark_core::Error> for ApiError {
    fn from(e: entmark_core::Error) -> Self {
        match e {
            entmark_core::Error::InvalidArgument(m) => ApiError::bad_request(m),
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: FromStr>(p: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError> {
    p.get(key)
        .map(|v| v.parse::<T>().map_err(|_| ApiError::bad_request(format!("malformed parameter {key}={v:?}"))))
        .transpose()
}

/// `h`, `el`, `c`, `cc` from the query string; the index defaults when none
/// is given.
pub fn thresholds_from(p: &HashMap<String, String>, defaults: Thresholds) -> Result<Thresholds, ApiError> {
    let t = Thresholds {
        h: parse(p, "h")?,
        el: parse(p, "el")?,
        c: parse(p, "c")?,
        cc: parse(p, "cc")?,
    };
    let t = if t == Thresholds::none() { defaults } else { t };
    t.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(t)
}

fn limit_from(p: &HashMap<String, String>) -> Result<usize, ApiError> {
    match parse::<usize>(p, "limit")? {
        Some(0) => Err(ApiError::bad_request("limit must be ≥ 1")),
        Some(n) => Ok(n.min(MAX_LIMIT)),
        None => Ok(DEFAULT_LIMIT),
    }
}

fn check_keys(p: &HashMap<String, String>, allowed: &[&str]) -> Result<(), ApiError> {
    match p.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::bad_request(format!("unknown parameter {k:?}"))),
        None => Ok(()),
    }
}

async fn entity_chunks(
    State(index): State<Arc<Index>>,
    Path(qid): Path<String>,
    Query(p): Params,
) -> ApiResult<entmark_core::index::QueryResult> {
    check_keys(&p, &["h", "el", "c", "cc", "limit", "offset"])?;
    let thresholds = thresholds_from(&p, index.config().default_thresholds)?;
    let spec = QuerySpec::new(qid, thresholds).page(limit_from(&p)?, parse(&p, "offset")?.unwrap_or(0));
    Ok(Json(index.query_entity(&spec)?))
}

#[derive(Serialize)]
pub struct StepRow {
    pub epoch: u32,
    pub step: u64,
}

#[derive(Serialize)]
pub struct StepsBody {
    pub qid: String,
    pub steps: Vec<StepRow>,
}

pub fn steps_body(index: &Index, qid: &str, t: &Thresholds) -> StepsBody {
    StepsBody {
        qid: qid.to_string(),
        steps: index
            .steps_for_entity(qid, t)
            .into_iter()
            .map(|(epoch, step)| StepRow { epoch, step })
            .collect(),
    }
}

async fn entity_steps(
    State(index): State<Arc<Index>>,
    Path(qid): Path<String>,
    Query(p): Params,
) -> ApiResult<StepsBody> {
    check_keys(&p, &["h", "el", "c", "cc"])?;
    let t = thresholds_from(&p, index.config().default_thresholds)?;
    Ok(Json(steps_body(&index, &qid, &t)))
}

async fn chunk(State(index): State<Arc<Index>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id: u64 = id.parse().map_err(|_| ApiError::bad_request(format!("malformed chunk id {id:?}")))?;
    match index.chunk(id) {
        Some(c) => Ok(Json(c).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("no chunk {id}"))),
    }
}

#[derive(Serialize)]
pub struct CooccurBody {
    pub a: String,
    pub b: String,
    pub count: usize,
}

async fn cooccur(State(index): State<Arc<Index>>, Query(p): Params) -> ApiResult<CooccurBody> {
    check_keys(&p, &["a", "b", "h", "el", "c", "cc"])?;
    let a = p.get("a").ok_or_else(|| ApiError::bad_request("missing parameter a"))?;
    let b = p.get("b").ok_or_else(|| ApiError::bad_request("missing parameter b"))?;
    let t = thresholds_from(&p, index.config().default_thresholds)?;
    Ok(Json(CooccurBody { a: a.clone(), b: b.clone(), count: index.cooccur_count(a, b, Some(&t)) }))
}

async fn search(
    State(index): State<Arc<Index>>,
    Query(p): Params,
) -> ApiResult<entmark_core::index::StringResult> {
    check_keys(&p, &["mode", "qid", "limit"])?;
    let mode: StringMode = p
        .get("mode")
        .ok_or_else(|| ApiError::bad_request("missing parameter mode"))?
        .parse()?;
    let qid = p.get("qid").ok_or_else(|| ApiError::bad_request("missing parameter qid"))?.clone();
    let limit = limit_from(&p)?;
    let result = tokio::task::spawn_blocking(move || match index.entity(&qid) {
        Some(e) => index.query_string(mode, e, Some(limit), false),
        None => entmark_core::index::StringResult { total: 0, hits: Vec::new() },
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(result))
}

async fn healthz(State(index): State<Arc<Index>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "chunks": index.chunks().len() }))
}

pub fn router(index: Arc<Index>) -> Router {
    Router::new()
        .route("/entities/{qid}/chunks", get(entity_chunks))
        .route("/entities/{qid}/steps", get(entity_steps))
        .route("/chunks/{id}", get(chunk))
        .route("/cooccur", get(cooccur))
        .route("/search", get(search))
        .route("/healthz", get(healthz))
        .with_state(index)
}

pub async fn serve(index: Arc<Index>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(index))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
