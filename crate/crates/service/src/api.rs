//! HTTP+JSON interface.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/runs` | create a run |
//! | GET | `/runs/{id}` | run manifest |
//! | POST | `/runs/{id}/sessions` | open an evaluator session |
//! | GET | `/runs/{id}/score` | score report |
//! | POST | `/qualification/sessions` | open a qualification session |
//! | GET | `/sessions/{id}/next?seq=` | next stimulus descriptor |
//! | POST | `/sessions/{id}/responses` | submit an answer |
//! | GET | `/sessions/{id}/stimuli/{seq}/image` | stimulus bytes |
//! | GET | `/sessions/{id}/stimuli/{seq}/masks/{i}` | mask PNG |
//! | GET | `/evaluators/{id}/payment` | payment statement |
//! | GET | `/compare?runs=a,b,c` | separability and metric correlations |
//! | POST | `/metrics` | CSV ingest (`model_id,metric,value`) |
//! | GET | `/healthz` | liveness |

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hype_core::pool::PaymentStatement;
use serde::Deserialize;

use crate::error::{Result, ServiceError};
use crate::report::{CompareReport, RunDraft, RunManifest};
use crate::store::{SessionCreated, StimulusDescriptor, Store, SubmitOutcome, SubmitRequest};

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/sessions", post(open_session))
        .route("/runs/{id}/score", get(score))
        .route("/qualification/sessions", post(open_qualification))
        .route("/sessions/{id}/next", get(next_stimulus))
        .route("/sessions/{id}/responses", post(submit))
        .route("/sessions/{id}/stimuli/{seq}/image", get(stimulus_image))
        .route("/sessions/{id}/stimuli/{seq}/masks/{index}", get(stimulus_mask))
        .route("/evaluators/{id}/payment", get(payment))
        .route("/compare", get(compare))
        .route("/metrics", post(ingest_metrics))
        .with_state(store)
}

type AppState = State<Arc<Store>>;

async fn create_run(State(store): AppState, Json(draft): Json<RunDraft>) -> Result<(StatusCode, Json<RunManifest>)> {
    Ok((StatusCode::CREATED, Json(store.create_run(draft)?)))
}

async fn get_run(State(store): AppState, Path(id): Path<String>) -> Result<Json<RunManifest>> {
    Ok(Json(store.manifest(&id)?))
}

#[derive(Deserialize)]
struct OpenSession {
    evaluator_id: String,
}

async fn open_session(
    State(store): AppState,
    Path(id): Path<String>,
    Json(body): Json<OpenSession>,
) -> Result<(StatusCode, Json<SessionCreated>)> {
    Ok((StatusCode::CREATED, Json(store.open_session(&id, &body.evaluator_id)?)))
}

async fn open_qualification(
    State(store): AppState,
    Json(body): Json<OpenSession>,
) -> Result<(StatusCode, Json<SessionCreated>)> {
    Ok((StatusCode::CREATED, Json(store.open_session(crate::store::QUALIFICATION_RUN, &body.evaluator_id)?)))
}

async fn score(State(store): AppState, Path(id): Path<String>) -> Result<Response> {
    let body = store.score_json(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Deserialize)]
struct NextQuery {
    seq: Option<u64>,
}

async fn next_stimulus(
    State(store): AppState,
    Path(id): Path<String>,
    Query(q): Query<NextQuery>,
) -> Result<Json<StimulusDescriptor>> {
    Ok(Json(store.next_stimulus(&id, q.seq)?))
}

async fn submit(
    State(store): AppState,
    Path(id): Path<String>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<SubmitOutcome>> {
    Ok(Json(store.submit_response(&id, req)?))
}

fn sniff_content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        "image/jpeg"
    } else {
        "application/octet-stream"
    }
}

async fn stimulus_image(State(store): AppState, Path((id, seq)): Path<(String, u64)>) -> Result<Response> {
    let bytes = store.stimulus_image(&id, seq)?;
    Ok(([(header::CONTENT_TYPE, sniff_content_type(&bytes)), (header::CACHE_CONTROL, "no-store")], bytes)
        .into_response())
}

async fn stimulus_mask(State(store): AppState, Path((id, seq, index)): Path<(String, u64, usize)>) -> Result<Response> {
    let png = tokio::task::spawn_blocking(move || store.stimulus_mask(&id, seq, index))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn payment(State(store): AppState, Path(id): Path<String>) -> Json<PaymentStatement> {
    Json(store.payment(&id))
}

#[derive(Deserialize)]
struct CompareQuery {
    runs: String,
}

async fn compare(State(store): AppState, Query(q): Query<CompareQuery>) -> Result<Json<CompareReport>> {
    let ids: Vec<String> = q.runs.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
    Ok(Json(store.compare(&ids)?))
}

async fn ingest_metrics(State(store): AppState, body: String) -> Result<Json<serde_json::Value>> {
    let rows = store.ingest_metrics(&body)?;
    Ok(Json(serde_json::json!({ "rows": rows })))
}

/// Binds `config.bind` and serves until interrupted.
pub async fn serve(store: Arc<Store>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(&store.config().bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
