//! Drives a scenario through the full system.

use std::collections::BTreeMap;

use serde::Serialize;

use super::detectors::{simulate_detectors, DetectorOutput, DetectorProfile, SIM_SOURCE};
use super::metrics::{compute_metrics, MatchingParams, MetricsReport};
use super::scenario::Scenario;
use super::SimError;
use crate::contact::{InfectionReport, PositionPing, TraceResult};
use crate::geom::Timestamp;
use crate::journal::Journal;
use crate::pipeline::{CredentialStore, IngestStatus, SourceCredential};
use crate::status::SpaceStatusSnapshot;
use crate::system::{System, SystemConfig, SystemError};

pub const SIM_API_KEY: &str = "vision-sim-key";
/// Per-minute event allowance for the simulated source.
pub const SIM_RATE_LIMIT: u32 = 600;

pub fn sim_credentials() -> CredentialStore {
    CredentialStore::new(vec![SourceCredential {
        source_id: SIM_SOURCE.to_string(),
        api_key: SIM_API_KEY.to_string(),
        rate_limit: SIM_RATE_LIMIT,
    }])
    .expect("one credential is always valid")
}

/// One input to the system, in the order a live deployment would see it.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedItem {
    Pings { at: Timestamp, pings: Vec<PositionPing> },
    Event { at: Timestamp, body: Vec<u8> },
    Infection { at: Timestamp, report: InfectionReport },
    Sanitize { at: Timestamp, space_id: String },
}

impl FeedItem {
    pub fn at(&self) -> Timestamp {
        match self {
            FeedItem::Pings { at, .. }
            | FeedItem::Event { at, .. }
            | FeedItem::Infection { at, .. }
            | FeedItem::Sanitize { at, .. } => *at,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            FeedItem::Pings { .. } => 0,
            FeedItem::Event { .. } => 1,
            FeedItem::Infection { .. } => 2,
            FeedItem::Sanitize { .. } => 3,
        }
    }
}

/// Merges detector output and the drill schedule into one ordered feed.
pub fn build_feed(scenario: &Scenario, output: &DetectorOutput) -> Vec<FeedItem> {
    let mut feed = Vec::new();
    let mut batch: Vec<PositionPing> = Vec::new();
    for p in &output.pings {
        if batch.first().is_some_and(|b| b.timestamp != p.timestamp) {
            feed.push(FeedItem::Pings { at: batch[0].timestamp, pings: std::mem::take(&mut batch) });
        }
        batch.push(p.clone());
    }
    if !batch.is_empty() {
        feed.push(FeedItem::Pings { at: batch[0].timestamp, pings: batch });
    }
    for e in &output.events {
        let body = serde_json::to_vec(&e.event).expect("events serialize");
        feed.push(FeedItem::Event { at: e.received_at, body });
    }
    for trial in &scenario.infection_plan {
        let report = InfectionReport {
            report_id: trial.report_id.clone(),
            badge_id: trial.badge_id.clone(),
            reported_at: trial.reported_at,
            lookback_seconds: crate::contact::DEFAULT_LOOKBACK_SECONDS,
        };
        feed.push(FeedItem::Infection { at: trial.reported_at, report });
        for space_id in &trial.true_spaces {
            feed.push(FeedItem::Sanitize { at: trial.sanitize_at, space_id: space_id.clone() });
        }
    }
    order_feed(&mut feed);
    feed
}

/// Puts feed items in delivery order: by time, and at equal times pings,
/// then events, then reports, then sanitizing. Stable, so equal keys keep
/// their arrival order.
pub fn order_feed(feed: &mut [FeedItem]) {
    feed.sort_by_key(|item| (item.at(), item.rank()));
}

/// Tally of what happened to submitted events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestCounts {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: BTreeMap<String, usize>,
}

/// Feeds one item. Rejected events are counted, not errors.
pub fn apply_feed_item(system: &mut System, item: &FeedItem, counts: &mut IngestCounts) -> Result<(), SystemError> {
    match item {
        FeedItem::Pings { at, pings } => {
            system.record_pings(pings, *at)?;
        }
        FeedItem::Event { at, body } => {
            let outcome = system.ingest(body, SIM_API_KEY, *at)?.outcome;
            match outcome.status {
                IngestStatus::AcceptedNew => counts.accepted += 1,
                IngestStatus::AcceptedDuplicate => counts.duplicates += 1,
                IngestStatus::Rejected => {
                    *counts.rejected.entry(outcome.reject_reason.unwrap_or_default()).or_default() += 1;
                }
            }
        }
        FeedItem::Infection { at, report } => {
            system.report_infection(report, *at)?;
        }
        FeedItem::Sanitize { at, space_id } => {
            system.mark_sanitized(space_id, *at)?;
        }
    }
    Ok(())
}

/// Advances past the last pending batch tick so nothing stays queued.
pub fn drain(system: &mut System, end: Timestamp) -> Result<Timestamp, SystemError> {
    let now = system.advance_clock(end)?;
    match system.next_tick() {
        Some(tick) if system.pipeline().queued().next().is_some() => system.advance_clock(tick),
        _ => Ok(now),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndToEndReport {
    pub metrics: MetricsReport,
    pub snapshot: SpaceStatusSnapshot,
    pub traces: Vec<TraceResult>,
    pub ingest: IngestCounts,
    pub events_sent: usize,
    pub pings_sent: usize,
    pub published: usize,
}

/// Detectors, pipeline, status engine and tracer over a whole scenario.
pub fn run_end_to_end(
    scenario: &Scenario,
    profile: &DetectorProfile,
    config: &SystemConfig,
    seed: u64,
) -> Result<EndToEndReport, SimError> {
    let output = simulate_detectors(scenario, profile, seed)?;
    let feed = build_feed(scenario, &output);
    let mut system = System::new(scenario.model.clone(), sim_credentials(), *config, Journal::discard())?;
    let mut counts = IngestCounts::default();
    for item in &feed {
        apply_feed_item(&mut system, item, &mut counts)?;
    }
    let last = feed.last().map_or(scenario.end, |i| i.at().max(scenario.end));
    let end = drain(&mut system, last)?;

    let traces: Vec<TraceResult> = system.tracer().traces().cloned().collect();
    let metrics = compute_metrics(scenario, system.pipeline().records(), &traces, &MatchingParams::default());
    Ok(EndToEndReport {
        metrics,
        snapshot: system.snapshot(end),
        traces,
        ingest: counts,
        events_sent: output.events.len(),
        pings_sent: output.pings.len(),
        published: system.pipeline().alert_count(),
    })
}
