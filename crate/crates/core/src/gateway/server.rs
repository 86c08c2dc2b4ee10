//! HTTP surface.

use std::convert::Infallible;
use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::bus::StreamError;
use super::desk::{self, DeskConfig, DeskError, DeskHandle};
use crate::chain::{ElementId, Hash32};
use crate::intent::{IntentError, IntentId, IntentRequest};
use crate::simnet::{self, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), message: message.into() } }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<DeskError> for ApiError {
    fn from(e: DeskError) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "Stopped", e.to_string())
    }
}

impl From<IntentError> for ApiError {
    fn from(e: IntentError) -> Self {
        let (status, code) = match &e {
            IntentError::UnknownTarget(_) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownTarget"),
            IntentError::NoFeasiblePolicy(_) => (StatusCode::UNPROCESSABLE_ENTITY, "NoFeasiblePolicy"),
            IntentError::PartialFailure { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "PartialFailure"),
            IntentError::UnknownIntent(_) => (StatusCode::NOT_FOUND, "UnknownIntent"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn chain_head(State(d): State<DeskHandle>) -> Json<crate::chain::ChainHead> {
    Json(d.snapshot().head.clone())
}

async fn block(State(d): State<DeskHandle>, Path(height): Path<u64>) -> ApiResult<Response> {
    let s = d.snapshot();
    let b = s.chain.block(height).ok_or_else(|| ApiError::not_found(format!("no block at height {height}")))?;
    Ok(Json(b.as_ref()).into_response())
}

async fn tx(State(d): State<DeskHandle>, Path(hash): Path<String>) -> ApiResult<Response> {
    let h = Hash32::from_hex(&hash).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadHash", "expected 64 hex digits"))?;
    let rec = d.snapshot().chain.tx(&h).ok_or_else(|| ApiError::not_found(format!("no transaction {hash}")))?;
    Ok(Json(rec).into_response())
}

async fn registry(State(d): State<DeskHandle>) -> Response {
    Json(&d.snapshot().registry).into_response()
}

async fn submit_intent(State(d): State<DeskHandle>, Json(req): Json<IntentRequest>) -> ApiResult<Response> {
    let id = d.submit(req).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "intent_id": id }))).into_response())
}

async fn intent_report(State(d): State<DeskHandle>, Path(id): Path<IntentId>) -> ApiResult<Response> {
    let s = d.snapshot();
    let e = s.intents.get(&id).ok_or(IntentError::UnknownIntent(id))?;
    Ok(Json(json!({
        "intent_id": id,
        "status": e.intent.status,
        "stage": e.stage(),
        "history": e.intent.history,
        "report": e.last_report(),
    }))
    .into_response())
}

async fn topology(State(d): State<DeskHandle>) -> Response {
    Json(d.snapshot().topology.as_ref()).into_response()
}

async fn mapping(State(d): State<DeskHandle>) -> Response {
    Json(&d.snapshot().mapping).into_response()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemapRequest {
    pub switch: String,
    pub controller: String,
}

async fn remap(State(d): State<DeskHandle>, Json(r): Json<RemapRequest>) -> ApiResult<Response> {
    d.remap(ElementId::new(r.switch), ElementId::new(r.controller))
        .await?
        .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "RemapRejected", m))?;
    Ok(Json(&d.snapshot().mapping).into_response())
}

async fn evict(State(d): State<DeskHandle>, Path(id): Path<String>) -> ApiResult<Response> {
    d.evict(ElementId::new(id.clone()))
        .await?
        .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "EvictRejected", m))?;
    Ok(Json(json!({ "evicted": id })).into_response())
}

#[derive(Debug, Deserialize)]
struct SeedQuery {
    seed: Option<u64>,
}

async fn run_scenario(Query(q): Query<SeedQuery>, Json(mut spec): Json<ScenarioSpec>) -> ApiResult<Response> {
    if let Some(seed) = q.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidScenario", e.to_string()))?;
    let out = tokio::task::spawn_blocking(move || simnet::run(spec))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidScenario", e.to_string()))?;
    Ok(Json(json!({
        "summary": out.summary(),
        "trace": out.trace,
        "metrics_csv": String::from_utf8_lossy(&out.metrics_csv()),
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
struct FromSeq {
    #[serde(default)]
    from_seq: u64,
}

fn sse_event(e: &super::bus::ApiEvent) -> Event {
    Event::default().id(e.seq.to_string()).event(serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()).json_data(e).expect("events serialize")
}

async fn events(State(d): State<DeskHandle>, Query(q): Query<FromSeq>) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let sub = d.bus().subscribe(q.from_seq).map_err(|e| match e {
        StreamError::SeqTooOld { .. } => ApiError::new(StatusCode::GONE, "SeqTooOld", e.to_string()),
        StreamError::SeqAhead { .. } => ApiError::new(StatusCode::BAD_REQUEST, "SeqAhead", e.to_string()),
    })?;
    let replay = stream::iter(sub.replay.into_iter().map(|e| Ok(sse_event(&e))));
    let resume = sub.resume_at;
    // A lagged subscriber ends its stream and must resubscribe from its last seq.
    let live = stream::unfold(sub.live, |mut rx| async move {
        match rx.recv().await {
            Ok(e) => Some((e, rx)),
            Err(_) => None,
        }
    })
    .filter(move |e| futures::future::ready(e.seq >= resume))
    .map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::default()))
}

pub fn router(desk: DeskHandle) -> Router {
    Router::new()
        .route("/chain/head", get(chain_head))
        .route("/chain/blocks/{height}", get(block))
        .route("/chain/tx/{hash}", get(tx))
        .route("/registry", get(registry))
        .route("/intents", post(submit_intent))
        .route("/intents/{id}/report", get(intent_report))
        .route("/topology", get(topology))
        .route("/mapping", get(mapping))
        .route("/mapping/remap", post(remap))
        .route("/elements/{id}/evict", post(evict))
        .route("/scenarios/run", post(run_scenario))
        .route("/events", get(events))
        .with_state(desk)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Desk(#[from] DeskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, cfg: DeskConfig) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::BindFailure { addr, source })?;
    serve_on(listener, desk::start(cfg)?).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, desk: DeskHandle) -> Result<(), ServeError> {
    axum::serve(listener, router(desk)).await?;
    Ok(())
}
