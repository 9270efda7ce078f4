use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clusterdiag_core::agent::{ApprovalStatus, Decision};
use clusterdiag_core::cluster_sim::FaultSpec;
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::service::{BenchRequest, Service};
use crate::GatewayError;

type AppState = State<Arc<Service>>;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Conflict(_) => StatusCode::CONFLICT,
            GatewayError::BadRequest(_) | GatewayError::Config(_) => StatusCode::BAD_REQUEST,
            GatewayError::Startup(_) | GatewayError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"code": self.code(), "message": self.to_string()});
        (status, Json(body)).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, GatewayError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| GatewayError::BadRequest(e.body_text()))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/telemetry", get(telemetry))
        .route("/alerts", get(alerts))
        .route("/sessions", get(sessions))
        .route("/sessions/{id}", get(session))
        .route("/approvals", get(approvals))
        .route("/approvals/{id}/decision", post(decide))
        .route("/faults", post(inject_fault))
        .route("/bench/run", post(bench_run))
        .route("/events", get(events))
        .fallback(|| async { GatewayError::NotFound("no such endpoint".into()) })
        .with_state(service)
}

#[derive(Deserialize)]
struct TelemetryQuery {
    #[serde(default = "default_window")]
    window: f64,
    device: Option<String>,
}

fn default_window() -> f64 {
    60.0
}

async fn telemetry(State(s): AppState, query: Result<Query<TelemetryQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let q = match query {
        Ok(Query(q)) => q,
        Err(e) => return GatewayError::BadRequest(e.body_text()).into_response(),
    };
    match s.telemetry(q.window, q.device.as_deref()) {
        Ok(samples) => Json(samples).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn alerts(State(s): AppState) -> Response {
    Json(s.alerts()).into_response()
}

async fn sessions(State(s): AppState) -> Response {
    Json(s.sessions()).into_response()
}

async fn session(State(s): AppState, Path(id): Path<String>) -> Response {
    match s.session(&id) {
        Ok(detail) => Json(detail).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct ApprovalQuery {
    status: Option<String>,
}

async fn approvals(State(s): AppState, Query(q): Query<ApprovalQuery>) -> Response {
    let status = match q.status.as_deref() {
        None => None,
        Some(text) => match ApprovalStatus::parse(text) {
            Some(status) => Some(status),
            None => {
                return GatewayError::BadRequest(format!(
                    "unknown status {text:?}; expected pending, approved or rejected"
                ))
                .into_response()
            }
        },
    };
    Json(s.approvals(status)).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: Decision,
    decider: String,
}

async fn decide(
    State(s): AppState,
    Path(id): Path<String>,
    payload: Result<Json<DecisionBody>, JsonRejection>,
) -> Response {
    let Ok(id) = id.parse::<u64>() else {
        return GatewayError::NotFound(format!("approval request {id} not found")).into_response();
    };
    let decision = match body(payload) {
        Ok(d) => d,
        Err(e) => return e.into_response(),
    };
    let result = tokio::task::spawn_blocking(move || s.decide(id, decision.decision, &decision.decider)).await;
    match result {
        Ok(Ok(request)) => Json(request).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => GatewayError::Internal(e.to_string()).into_response(),
    }
}

async fn inject_fault(State(s): AppState, payload: Result<Json<FaultSpec>, JsonRejection>) -> Response {
    let fault = match body(payload) {
        Ok(f) => f,
        Err(e) => return e.into_response(),
    };
    match tokio::task::spawn_blocking(move || s.inject_fault(fault)).await {
        Ok(Ok(accepted)) => (StatusCode::CREATED, Json(accepted)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => GatewayError::Internal(e.to_string()).into_response(),
    }
}

async fn bench_run(State(s): AppState, payload: Result<Json<BenchRequest>, JsonRejection>) -> Response {
    let request = match body(payload) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match tokio::task::spawn_blocking(move || s.run_bench(&request)).await {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => GatewayError::Internal(e.to_string()).into_response(),
    }
}

/// Server-sent events. A subscriber that falls behind the buffer gets one
/// `error` event and the stream ends; it should reconnect and re-read state.
async fn events(State(s): AppState) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.hub().subscribe();
    let stream = stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(envelope) => {
                let event = Event::default()
                    .event(envelope.kind.clone())
                    .id(envelope.seq.to_string())
                    .json_data(&envelope)
                    .expect("envelopes serialize");
                Some((Ok(event), Some(rx)))
            }
            Err(RecvError::Lagged(missed)) => {
                let body = json!({
                    "code": "lagged",
                    "message": format!("subscriber fell {missed} events behind; reconnect and re-read state"),
                });
                Some((Ok(Event::default().event("error").data(body.to_string())), None))
            }
            Err(RecvError::Closed) => None,
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
