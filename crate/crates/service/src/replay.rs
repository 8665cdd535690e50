//! Replays a detector feed against a running service over HTTP.
//!
//! The client asks the service for its clock and skips everything older,
//! so an interrupted replay can simply be started again. Items at exactly
//! the clock are resent; the service treats resends as no-ops.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use ureq::Agent;

use sopwatch_core::sim::FeedItem;
use sopwatch_core::Timestamp;

use crate::api::{API_KEY_HEADER, SIM_TIME_HEADER};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{url} answered {status}: {body}")]
    Status { url: String, status: u16, body: String },
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub base_url: String,
    pub api_key: String,
    /// Stop after sending this many feed items (for testing interruption).
    pub limit: Option<usize>,
    /// Advance the service clock past the end and flush queued violations.
    pub drain: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub resumed_from: Option<Timestamp>,
    pub skipped: usize,
    pub sent: usize,
    pub events_accepted: usize,
    pub events_duplicate: usize,
    pub events_rejected: BTreeMap<String, usize>,
    pub pings: usize,
    pub reports: usize,
    pub reports_already_filed: usize,
    pub complete: bool,
}

struct Client {
    agent: Agent,
    base: String,
    key: String,
}

impl Client {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, at: Option<Timestamp>, body: &[u8]) -> Result<(u16, Value), ReplayError> {
        let url = self.url(path);
        let mut req = self.agent.post(&url).header(API_KEY_HEADER, &self.key).content_type("application/json");
        if let Some(at) = at {
            req = req.header(SIM_TIME_HEADER, at.to_string());
        }
        let resp = req.send(body).map_err(|e| ReplayError::Transport { url: url.clone(), message: e.to_string() })?;
        read(url, resp)
    }

    fn get(&self, path: &str) -> Result<(u16, Value), ReplayError> {
        let url = self.url(path);
        let resp =
            self.agent.get(&url).call().map_err(|e| ReplayError::Transport { url: url.clone(), message: e.to_string() })?;
        read(url, resp)
    }
}

fn read(url: String, mut resp: ureq::http::Response<ureq::Body>) -> Result<(u16, Value), ReplayError> {
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ReplayError::Transport { url: url.clone(), message: e.to_string() })?;
    if status >= 500 {
        return Err(ReplayError::Status { url, status, body: text });
    }
    Ok((status, serde_json::from_str(&text).unwrap_or(Value::Null)))
}

fn expect_ok(url: &str, status: u16, body: &Value) -> Result<(), ReplayError> {
    if (200..300).contains(&status) {
        Ok(())
    } else {
        Err(ReplayError::Status { url: url.to_string(), status, body: body.to_string() })
    }
}

/// Sends a delivery-ordered feed, resuming from the service's clock. With
/// `drain`, the clock is finally moved to `end` (or the last item, if
/// later) so nothing stays queued.
pub fn replay(feed: &[FeedItem], end: Timestamp, opts: &ReplayOptions) -> Result<ReplaySummary, ReplayError> {
    let client = Client {
        agent: Agent::config_builder().http_status_as_error(false).build().into(),
        base: opts.base_url.clone(),
        key: opts.api_key.clone(),
    };
    let (status, health) = client.get("/healthz")?;
    expect_ok("/healthz", status, &health)?;
    let clock = health.get("clock").and_then(Value::as_i64);

    let mut summary = ReplaySummary { resumed_from: clock, ..Default::default() };
    for item in feed {
        if clock.is_some_and(|c| item.at() < c) {
            summary.skipped += 1;
            continue;
        }
        if opts.limit.is_some_and(|n| summary.sent >= n) {
            return Ok(summary);
        }
        send(&client, item, &mut summary)?;
        summary.sent += 1;
    }
    if opts.drain {
        let end = feed.last().map_or(end, |i| i.at().max(end));
        let body = json!({ "to": end, "drain": true }).to_string();
        let (status, resp) = client.post("/clock", None, body.as_bytes())?;
        expect_ok("/clock", status, &resp)?;
    }
    summary.complete = true;
    Ok(summary)
}

fn send(client: &Client, item: &FeedItem, summary: &mut ReplaySummary) -> Result<(), ReplayError> {
    let at = Some(item.at());
    match item {
        FeedItem::Pings { pings, .. } => {
            let body = serde_json::to_vec(pings).expect("pings serialize");
            let (status, resp) = client.post("/pings", at, &body)?;
            expect_ok("/pings", status, &resp)?;
            summary.pings += pings.len();
        }
        FeedItem::Event { body, .. } => {
            let (status, resp) = client.post("/events", at, body)?;
            match status {
                200 if resp["status"] == "accepted_new" => summary.events_accepted += 1,
                200 => summary.events_duplicate += 1,
                401 => expect_ok("/events", status, &resp)?,
                // detector faults are expected in the feed; tally them
                400..=499 => {
                    let code = resp.get("code").and_then(Value::as_str).unwrap_or("unknown").to_string();
                    *summary.events_rejected.entry(code).or_default() += 1;
                }
                _ => expect_ok("/events", status, &resp)?,
            }
        }
        FeedItem::Infection { report, .. } => {
            let body = serde_json::to_vec(report).expect("report serializes");
            let (status, resp) = client.post("/infections", at, &body)?;
            if status == 409 {
                summary.reports_already_filed += 1;
            } else {
                expect_ok("/infections", status, &resp)?;
                summary.reports += 1;
            }
        }
        FeedItem::Sanitize { space_id, .. } => {
            let path = format!("/spaces/{space_id}/sanitized");
            let (status, resp) = client.post(&path, at, b"")?;
            expect_ok(&path, status, &resp)?;
        }
    }
    Ok(())
}
