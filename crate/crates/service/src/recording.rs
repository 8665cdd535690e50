//! Recorded detector streams on disk, as written by `sopwatch simulate` and
//! read back by `sopwatch replay`.
//!
//! A recording directory holds newline-delimited JSON:
//!
//! - `events.ndjson`: `{"received_at": t, "event": {...}}`, in arrival order
//! - `pings.ndjson`: one position ping per line, in time order
//! - `drills.ndjson`: `{"at": t, "infection": {...}}` or
//!   `{"at": t, "sanitized": "space-id"}`
//!
//! plus `metrics.json` and the full `run.json` report.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sopwatch_core::contact::{InfectionReport, PositionPing};
use sopwatch_core::sim::{order_feed, DetectorOutput, EndToEndReport, FeedItem, Scenario};
use sopwatch_core::{AnomalyEvent, Timestamp};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const PINGS_FILE: &str = "pings.ndjson";
pub const DRILLS_FILE: &str = "drills.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedEvent {
    pub received_at: Timestamp,
    pub event: AnomalyEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedDrill {
    pub at: Timestamp,
    #[serde(flatten)]
    pub step: DrillStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrillStep {
    Infection(InfectionReport),
    Sanitized(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RecordingError + '_ {
    move |source| RecordingError::Io { path: path.to_path_buf(), source }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), RecordingError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("records serialize");
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RecordingError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| RecordingError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes the streams, metrics and full report of a run into `dir`.
pub fn write_recording(
    dir: &Path,
    scenario: &Scenario,
    output: &DetectorOutput,
    run: &EndToEndReport,
) -> Result<(), RecordingError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_lines(
        &dir.join(EVENTS_FILE),
        output.events.iter().map(|e| RecordedEvent { received_at: e.received_at, event: e.event.clone() }),
    )?;
    write_lines(&dir.join(PINGS_FILE), &output.pings)?;
    let mut drills = Vec::new();
    for trial in &scenario.infection_plan {
        let report = InfectionReport {
            report_id: trial.report_id.clone(),
            badge_id: trial.badge_id.clone(),
            reported_at: trial.reported_at,
            lookback_seconds: sopwatch_core::contact::DEFAULT_LOOKBACK_SECONDS,
        };
        drills.push(RecordedDrill { at: trial.reported_at, step: DrillStep::Infection(report) });
        for space in &trial.true_spaces {
            drills.push(RecordedDrill { at: trial.sanitize_at, step: DrillStep::Sanitized(space.clone()) });
        }
    }
    write_lines(&dir.join(DRILLS_FILE), drills)?;
    let metrics = serde_json::to_string_pretty(&run.metrics).expect("reports serialize");
    let full = serde_json::to_string_pretty(run).expect("reports serialize");
    for (name, text) in [(METRICS_FILE, metrics), (RUN_FILE, full)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Rebuilds a delivery-ordered feed from recorded streams. Pings and drills
/// are optional.
pub fn read_feed(events: &Path, pings: Option<&Path>, drills: Option<&Path>) -> Result<Vec<FeedItem>, RecordingError> {
    let mut feed = Vec::new();
    if let Some(path) = pings {
        let mut batch: Vec<PositionPing> = Vec::new();
        for p in read_lines::<PositionPing>(path)? {
            if batch.first().is_some_and(|b| b.timestamp != p.timestamp) {
                feed.push(FeedItem::Pings { at: batch[0].timestamp, pings: std::mem::take(&mut batch) });
            }
            batch.push(p);
        }
        if !batch.is_empty() {
            feed.push(FeedItem::Pings { at: batch[0].timestamp, pings: batch });
        }
    }
    for e in read_lines::<RecordedEvent>(events)? {
        let body = serde_json::to_vec(&e.event).expect("events serialize");
        feed.push(FeedItem::Event { at: e.received_at, body });
    }
    if let Some(path) = drills {
        for d in read_lines::<RecordedDrill>(path)? {
            feed.push(match d.step {
                DrillStep::Infection(report) => FeedItem::Infection { at: d.at, report },
                DrillStep::Sanitized(space_id) => FeedItem::Sanitize { at: d.at, space_id },
            });
        }
    }
    order_feed(&mut feed);
    Ok(feed)
}
