//! HTTP routes. All bodies are JSON; errors are `{code, message, details}`.
//!
//! Every accepted event, new or duplicate, answers 200 with its ingest
//! outcome; rejections answer 401, 429 or 422.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use sopwatch_core::contact::{InfectionReport, PositionPing, TraceError};
use sopwatch_core::pipeline::IngestStatus;
use sopwatch_core::status::StatusError;
use sopwatch_core::system::SystemError;
use sopwatch_core::twin::ModelError;
use sopwatch_core::Timestamp;

use sopwatch_core::sim::drain;

use crate::state::{Alert, ClockMode, Shared};

pub const API_KEY_HEADER: &str = "x-api-key";
/// Simulated clock only: the time at which a replayed request "arrives".
/// Ignored under the system clock.
pub const SIM_TIME_HEADER: &str = "x-sim-time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.into(), message: message.into(), details: Value::Null }
    }

    fn with(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<SystemError> for ApiError {
    fn from(e: SystemError) -> Self {
        let msg = e.to_string();
        let (status, code) = match &e {
            SystemError::Trace(TraceError::UnknownBadge(_)) | SystemError::Model(ModelError::UnknownBadge(_)) => {
                (StatusCode::NOT_FOUND, "unknown_badge")
            }
            SystemError::Trace(TraceError::UnknownSpace(_))
            | SystemError::Status(StatusError::UnknownSpace(_))
            | SystemError::Model(ModelError::UnknownSpace(_)) => (StatusCode::NOT_FOUND, "unknown_space"),
            SystemError::Model(ModelError::InvalidTarget(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "not_an_area"),
            SystemError::Trace(TraceError::LocationOutOfBounds { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "location_out_of_bounds")
            }
            SystemError::Trace(TraceError::InvalidLookback) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_lookback"),
            SystemError::Trace(TraceError::DuplicateReport(_)) => (StatusCode::CONFLICT, "duplicate_report"),
            SystemError::Journal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "journal_error"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, msg)
    }
}

fn bad_body(e: impl ToString) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.to_string())
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(bad_body)
}

fn api_key(headers: &HeaderMap) -> &str {
    headers.get(API_KEY_HEADER).and_then(|v| v.to_str().ok()).unwrap_or("")
}

fn sim_time(headers: &HeaderMap) -> Option<Timestamp> {
    headers.get(SIM_TIME_HEADER)?.to_str().ok()?.trim().parse().ok()
}

pub fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/events", post(post_event))
        .route("/pings", post(post_pings))
        .route("/infections", post(post_infection))
        .route("/spaces/{id}/sanitized", post(post_sanitized))
        .route("/people/{badge}/reassign", post(post_reassign))
        .route("/snapshot", get(get_snapshot))
        .route("/violations", get(get_violations))
        .route("/trace/{id}", get(get_trace))
        .route("/alerts", get(get_alerts))
        .route("/clock", post(post_clock))
        .route("/healthz", get(get_health));
    if let Some(dir) = state.loaded.ui_dir.clone() {
        if dir.is_dir() {
            app = app.nest_service("/ui", ServeDir::new(dir));
        } else {
            tracing::warn!(dir = %dir.display(), "dashboard assets not found; /ui disabled");
        }
    }
    app.with_state(state)
}

async fn post_event(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    // in simulated mode the event's own timestamp drives the clock
    let hint = sim_time(&headers)
        .or_else(|| serde_json::from_slice::<Value>(&body).ok().and_then(|v| v.get("timestamp")?.as_i64()));
    let key = api_key(&headers).to_string();
    let result = state.mutate(hint, |sys, now| sys.ingest(&body, &key, now))?;
    let outcome = result.outcome;
    if outcome.status == IngestStatus::Rejected {
        let reason = outcome.reject_reason.clone().unwrap_or_default();
        let status = match reason.as_str() {
            "auth_failed" => StatusCode::UNAUTHORIZED,
            "rate_limited" => StatusCode::TOO_MANY_REQUESTS,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let details = json!({ "field_errors": outcome.field_errors });
        return Err(ApiError::new(status, reason, "event rejected").with(details));
    }
    let reported_at = result.published.and_then(|v| v.reported_at);
    let mut body = serde_json::to_value(&outcome).expect("outcome serializes");
    body["reported_at"] = json!(reported_at);
    Ok(Json(body).into_response())
}

async fn post_pings(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Result<Json<Value>, ApiError> {
    let authorized = state.read(|sys, _| sys.pipeline().credentials().authenticate_key(api_key(&headers)).is_ok());
    if !authorized {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "auth_failed", "authentication failed"));
    }
    let pings: Vec<PositionPing> = parse(&body)?;
    let hint = sim_time(&headers).or_else(|| pings.iter().map(|p| p.timestamp).max());
    let outcome = state.mutate(hint, |sys, now| sys.record_pings(&pings, now))?;
    let raised: Vec<Value> =
        outcome.raised.iter().map(|(e, o)| json!({ "event_id": e.event_id, "outcome": o })).collect();
    Ok(Json(json!({ "accepted": outcome.accepted, "raised": raised })))
}

async fn post_infection(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Result<Json<Value>, ApiError> {
    let report: InfectionReport = parse(&body)?;
    let hint = sim_time(&headers).unwrap_or(report.reported_at);
    let result = state.mutate(Some(hint), |sys, now| sys.report_infection(&report, now))?;
    Ok(Json(serde_json::to_value(result).expect("trace serializes")))
}

async fn post_sanitized(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let was_at_risk = state.mutate(sim_time(&headers), |sys, now| sys.mark_sanitized(&id, now))?;
    Ok(Json(json!({ "space_id": id, "was_at_risk": was_at_risk })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReassignBody {
    space_id: String,
}

async fn post_reassign(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path(badge): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let target: ReassignBody = parse(&body)?;
    state.mutate(sim_time(&headers), |sys, now| sys.reassign(&badge, &target.space_id, now))?;
    Ok(Json(json!({ "badge_id": badge, "space_id": target.space_id })))
}

#[derive(Debug, Deserialize)]
struct AtQuery {
    at: Option<Timestamp>,
}

async fn get_snapshot(State(state): State<Shared>, Query(q): Query<AtQuery>) -> Json<Value> {
    Json(state.read(|sys, now| serde_json::to_value(sys.snapshot(q.at.unwrap_or(now))).expect("snapshot serializes")))
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: usize,
    limit: Option<usize>,
}

async fn get_violations(State(state): State<Shared>, Query(q): Query<SinceQuery>) -> Json<Value> {
    let limit = q.limit.unwrap_or(1000);
    Json(state.read(|sys, _| {
        let items: Vec<Alert> = sys
            .pipeline()
            .alerts_since(q.since)
            .take(limit)
            .map(|(seq, v)| Alert { seq, violation: v.clone() })
            .collect();
        let next = items.last().map_or(q.since, |a| a.seq + 1);
        json!({ "since": q.since, "next": next, "violations": items })
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockBody {
    to: Timestamp,
    /// Also run the next batch tick if violations are still queued.
    #[serde(default)]
    drain: bool,
}

/// Simulated clock only: moves time forward so batch ticks fire.
async fn post_clock(State(state): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    if state.info.clock_mode != ClockMode::Simulated {
        return Err(ApiError::new(StatusCode::CONFLICT, "system_clock", "the clock only moves in simulated mode"));
    }
    let req: ClockBody = parse(&body)?;
    let clock = state.mutate(Some(req.to), |sys, now| {
        if req.drain {
            drain(sys, now)
        } else {
            sys.advance_clock(now)
        }
    })?;
    Ok(Json(json!({ "clock": clock })))
}

async fn get_trace(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    state
        .read(|sys, _| sys.tracer().trace_result(&id).map(|t| serde_json::to_value(t).expect("trace serializes")))
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_report", format!("no trace for report {id:?}")))
}

async fn get_alerts(
    State(state): State<Shared>,
    Query(q): Query<SinceQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (backlog, rx) = state.subscribe(q.since);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(alert) => return Some((alert, rx)),
                // a slow client skips ahead; it can refill from /violations
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(backlog).chain(live).map(|a| {
        Ok(Event::default().id(a.seq.to_string()).event("violation").json_data(&a.violation).expect("records serialize"))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn get_health(State(state): State<Shared>) -> Json<Value> {
    let info = &state.info;
    let (clock, violations, published, at_risk): (Option<Timestamp>, usize, usize, usize) = state.read(|sys, _| {
        (sys.clock(), sys.pipeline().records().len(), sys.pipeline().alert_count(), sys.status().at_risk_spaces().len())
    });
    Json(json!({
        "status": "ok",
        "model_id": info.model_id,
        "areas": info.areas,
        "people": info.people,
        "clock_mode": info.clock_mode,
        "clock": clock,
        "violations": violations,
        "published": published,
        "at_risk_spaces": at_risk,
        "recovered_records": info.recovered_records,
        "config_hashes": info.hashes,
    }))
}
