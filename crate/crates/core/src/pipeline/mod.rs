//! Ingestion and orchestration of anomaly events.
//!
//! `ingest` runs authenticate → rate check → parse → validate → exact-id
//! replay check → schedule gate → similarity dedup → priority routing.
//! Immediate violations are published before `ingest` returns; the rest
//! wait in a queue for the next batch tick.

mod dedup;
mod gateway;
mod validate;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{AnomalyEvent, RawEvent};
use crate::geom::Timestamp;
use crate::journal::{Journal, JournalError, RecordKind};
use crate::twin::{ModelError, Priority, TwinBinding, TwinModel};

pub use dedup::{similarity, DedupConfig, DedupDecision, Deduplicator};
pub use gateway::{
    AuthFailed, CredentialError, CredentialStore, RateDecision, RateLimiter, SourceContext, SourceCredential,
    RATE_WINDOW_SECONDS,
};
pub use validate::{validate_event, FieldError, CLOCK_SKEW_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSchedule {
    pub tick_interval_seconds: i64,
}

impl Default for BatchSchedule {
    fn default() -> Self {
        BatchSchedule { tick_interval_seconds: 900 }
    }
}

impl BatchSchedule {
    /// Last tick boundary at or before `t`. Ticks sit on multiples of the
    /// interval since the epoch.
    pub fn tick_at_or_before(&self, t: Timestamp) -> Timestamp {
        t.div_euclid(self.tick_interval_seconds) * self.tick_interval_seconds
    }

    /// Tick boundaries in `(after, upto]`.
    pub fn ticks_between(&self, after: Timestamp, upto: Timestamp) -> impl Iterator<Item = Timestamp> {
        let step = self.tick_interval_seconds;
        let first = self.tick_at_or_before(after) + step;
        (0..)
            .map(move |k| first + k * step)
            .take_while(move |&t| t <= upto)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dedup: DedupConfig,
    pub schedule: BatchSchedule,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("replayed event {event_id} produced {actual:?}, journal says {recorded:?}")]
    ReplayMismatch { event_id: String, recorded: Box<IngestOutcome>, actual: Box<IngestOutcome> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    AcceptedNew,
    AcceptedDuplicate,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub status: IngestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field_errors: Vec<FieldError>,
}

impl IngestOutcome {
    fn new_violation(id: String) -> Self {
        IngestOutcome {
            status: IngestStatus::AcceptedNew,
            violation_id: Some(id),
            duplicate_of: None,
            reject_reason: None,
            field_errors: Vec::new(),
        }
    }

    fn duplicate(of: String) -> Self {
        IngestOutcome {
            status: IngestStatus::AcceptedDuplicate,
            violation_id: None,
            duplicate_of: Some(of),
            reject_reason: None,
            field_errors: Vec::new(),
        }
    }

    pub fn rejected(reason: impl Into<String>) -> Self {
        IngestOutcome {
            status: IngestStatus::Rejected,
            violation_id: None,
            duplicate_of: None,
            reject_reason: Some(reason.into()),
            field_errors: Vec::new(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.status != IngestStatus::Rejected
    }
}

/// A deduplicated violation bound to the twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub violation_id: String,
    /// First event seen for this violation.
    pub canonical: AnomalyEvent,
    pub duplicate_event_ids: Vec<String>,
    pub binding: TwinBinding,
    pub priority: Priority,
    pub detected_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_at: Option<Timestamp>,
}

/// Journal body for one accepted event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub received_at: Timestamp,
    pub source_id: String,
    pub event: AnomalyEvent,
    pub outcome: IngestOutcome,
}

/// Journal body for one non-empty batch tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishRecord {
    pub violation_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    pub outcome: IngestOutcome,
    /// Set when an immediate violation was published during this call.
    pub published: Option<ViolationRecord>,
}

impl IngestResult {
    fn rejected(outcome: IngestOutcome) -> Self {
        IngestResult { outcome, published: None }
    }
}

#[derive(Debug, Clone, Copy)]
enum Acceptance {
    New(Priority),
    Duplicate(usize),
}

pub fn violation_id(index: usize) -> String {
    format!("v-{:08}", index + 1)
}

pub struct Pipeline {
    model: Arc<TwinModel>,
    config: PipelineConfig,
    credentials: CredentialStore,
    rates: RateLimiter,
    dedup: Deduplicator,
    records: Vec<ViolationRecord>,
    by_event_id: HashMap<String, usize>,
    queue: BTreeSet<(Timestamp, usize)>,
    published: Vec<usize>,
}

impl Pipeline {
    pub fn new(model: Arc<TwinModel>, credentials: CredentialStore, config: PipelineConfig) -> Result<Self, PipelineError> {
        if !config.dedup.is_valid() {
            return Err(PipelineError::InvalidConfig(format!("dedup settings out of range: {:?}", config.dedup)));
        }
        if config.schedule.tick_interval_seconds < 1 {
            return Err(PipelineError::InvalidConfig("tick_interval_seconds must be at least 1".into()));
        }
        Ok(Pipeline {
            model,
            config,
            credentials,
            rates: RateLimiter::new(),
            dedup: Deduplicator::new(),
            records: Vec::new(),
            by_event_id: HashMap::new(),
            queue: BTreeSet::new(),
            published: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<TwinModel> {
        &self.model
    }

    pub fn set_model(&mut self, model: Arc<TwinModel>) {
        self.model = model;
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.credentials
    }

    pub fn rate_limiter(&self) -> &RateLimiter {
        &self.rates
    }

    pub fn records(&self) -> &[ViolationRecord] {
        &self.records
    }

    pub fn record(&self, violation_id: &str) -> Option<&ViolationRecord> {
        let n: usize = violation_id.strip_prefix("v-")?.parse().ok()?;
        self.records.get(n.checked_sub(1)?)
    }

    /// Published records in publish order, starting at alert `cursor`.
    pub fn alerts_since(&self, cursor: usize) -> impl Iterator<Item = (usize, &ViolationRecord)> + '_ {
        self.published.iter().enumerate().skip(cursor).map(|(seq, &i)| (seq, &self.records[i]))
    }

    pub fn alert_count(&self) -> usize {
        self.published.len()
    }

    pub fn queued(&self) -> impl Iterator<Item = &ViolationRecord> + '_ {
        self.queue.iter().map(|&(_, i)| &self.records[i])
    }

    pub fn classify_priority(&self, event: &AnomalyEvent) -> Result<Priority, ModelError> {
        Ok(self.model.policy_for(&event.space_id, event.vtype)?.priority)
    }

    /// Full gateway path for an event body arriving from a detector.
    pub fn ingest(
        &mut self,
        body: &[u8],
        api_key: &str,
        now: Timestamp,
        journal: &mut Journal,
    ) -> Result<IngestResult, JournalError> {
        let Ok(ctx) = self.credentials.authenticate_key(api_key) else {
            return Ok(IngestResult::rejected(IngestOutcome::rejected("auth_failed")));
        };
        if self.rates.check_rate(&ctx, now) == RateDecision::Throttle {
            return Ok(IngestResult::rejected(IngestOutcome::rejected("rate_limited")));
        }
        let raw: RawEvent = match serde_json::from_slice(body) {
            Ok(raw) => raw,
            Err(_) => return Ok(IngestResult::rejected(IngestOutcome::rejected("malformed"))),
        };
        if raw.source_id.as_ref().is_some_and(|s| !s.is_empty() && *s != ctx.source_id) {
            let mut out = IngestOutcome::rejected("validation:source_id");
            out.field_errors.push(FieldError { field: "source_id".into(), code: "source_mismatch".into() });
            return Ok(IngestResult::rejected(out));
        }
        self.ingest_raw(&raw, &ctx.source_id, now, journal)
    }

    /// Ingest from an in-process producer (location service, contact
    /// tracing). Skips authentication and rate limiting only.
    pub fn ingest_trusted(
        &mut self,
        event: &AnomalyEvent,
        now: Timestamp,
        journal: &mut Journal,
    ) -> Result<IngestResult, JournalError> {
        self.ingest_raw(&RawEvent::from(event), &event.source_id, now, journal)
    }

    fn ingest_raw(
        &mut self,
        raw: &RawEvent,
        source_id: &str,
        now: Timestamp,
        journal: &mut Journal,
    ) -> Result<IngestResult, JournalError> {
        let event = match validate_event(raw, &self.model, now) {
            Ok(event) => event,
            Err(errors) => {
                let reason = if errors.iter().any(|e| e.code == "unknown_space") {
                    "unknown_space".to_string()
                } else {
                    format!("validation:{}", errors[0].field)
                };
                let mut out = IngestOutcome::rejected(reason);
                out.field_errors = errors;
                return Ok(IngestResult::rejected(out));
            }
        };
        let acceptance = match self.judge(&event) {
            Ok(a) => a,
            Err(rejection) => return Ok(IngestResult::rejected(rejection)),
        };
        let outcome = self.outcome_for(acceptance);
        let record = IngestRecord { received_at: now, source_id: source_id.to_string(), event, outcome };
        journal.append(RecordKind::Ingest, now, &record)?;
        let published = self.commit(&record.source_id, record.event, acceptance, now);
        Ok(IngestResult { outcome: record.outcome, published })
    }

    fn judge(&self, event: &AnomalyEvent) -> Result<Acceptance, IngestOutcome> {
        if let Some(&idx) = self.by_event_id.get(&event.event_id) {
            return Ok(Acceptance::Duplicate(idx));
        }
        let policy = self
            .model
            .policy_for(&event.space_id, event.vtype)
            .map_err(|_| IngestOutcome::rejected("unknown_space"))?;
        if !policy.enabled {
            let mut out = IngestOutcome::rejected("validation:vtype");
            out.field_errors.push(FieldError { field: "vtype".into(), code: "policy_disabled".into() });
            return Err(out);
        }
        if policy.priority == Priority::DelayTolerant
            && !self.model.in_operational_window(&event.space_id, event.timestamp)
        {
            return Err(IngestOutcome::rejected("out_of_schedule"));
        }
        Ok(match self.dedup.deduplicate(event, &self.config.dedup) {
            DedupDecision::New => Acceptance::New(policy.priority),
            DedupDecision::DuplicateOf(idx) => Acceptance::Duplicate(idx),
        })
    }

    fn outcome_for(&self, acceptance: Acceptance) -> IngestOutcome {
        match acceptance {
            Acceptance::New(_) => IngestOutcome::new_violation(violation_id(self.records.len())),
            Acceptance::Duplicate(idx) => IngestOutcome::duplicate(self.records[idx].violation_id.clone()),
        }
    }

    fn commit(
        &mut self,
        source_id: &str,
        event: AnomalyEvent,
        acceptance: Acceptance,
        now: Timestamp,
    ) -> Option<ViolationRecord> {
        self.rates.record(source_id, now);
        match acceptance {
            Acceptance::Duplicate(idx) => {
                self.by_event_id.entry(event.event_id.clone()).or_insert(idx);
                // listed once, however often it is resent
                let ids = &mut self.records[idx].duplicate_event_ids;
                if !ids.contains(&event.event_id) {
                    ids.push(event.event_id);
                }
                None
            }
            Acceptance::New(priority) => {
                let idx = self.records.len();
                let binding = self.model.map_event(&event).expect("event space validated before commit");
                self.by_event_id.insert(event.event_id.clone(), idx);
                self.dedup.insert(idx, &event);
                let mut record = ViolationRecord {
                    violation_id: violation_id(idx),
                    canonical: event,
                    duplicate_event_ids: Vec::new(),
                    binding,
                    priority,
                    detected_at: now,
                    reported_at: None,
                };
                let published = match priority {
                    Priority::Immediate => {
                        record.reported_at = Some(now);
                        self.published.push(idx);
                        Some(record.clone())
                    }
                    Priority::DelayTolerant => {
                        self.queue.insert((now, idx));
                        None
                    }
                };
                self.records.push(record);
                published
            }
        }
    }

    fn due(&self, now: Timestamp) -> Vec<usize> {
        self.queue.range(..=(now, usize::MAX)).map(|&(_, i)| i).collect()
    }

    fn publish(&mut self, due: &[usize], now: Timestamp) -> Vec<ViolationRecord> {
        due.iter()
            .map(|&i| {
                self.queue.remove(&(self.records[i].detected_at, i));
                self.records[i].reported_at = Some(now);
                self.published.push(i);
                self.records[i].clone()
            })
            .collect()
    }

    /// Publishes every queued violation detected at or before `now`, in
    /// `(detected_at, violation_id)` order.
    pub fn run_batch_tick(&mut self, now: Timestamp, journal: &mut Journal) -> Result<Vec<ViolationRecord>, JournalError> {
        let due = self.due(now);
        if due.is_empty() {
            return Ok(Vec::new());
        }
        let body = PublishRecord { violation_ids: due.iter().map(|&i| self.records[i].violation_id.clone()).collect() };
        journal.append(RecordKind::Publish, now, &body)?;
        journal.sync()?;
        Ok(self.publish(&due, now))
    }

    /// Re-applies a journaled ingest. The recomputed outcome must match the
    /// recorded one.
    pub fn replay_ingest(&mut self, record: &IngestRecord) -> Result<Option<ViolationRecord>, PipelineError> {
        let mismatch = |actual: IngestOutcome| PipelineError::ReplayMismatch {
            event_id: record.event.event_id.clone(),
            recorded: Box::new(record.outcome.clone()),
            actual: Box::new(actual),
        };
        let acceptance = self.judge(&record.event).map_err(mismatch)?;
        let outcome = self.outcome_for(acceptance);
        if outcome != record.outcome {
            return Err(mismatch(outcome));
        }
        Ok(self.commit(&record.source_id, record.event.clone(), acceptance, record.received_at))
    }

    /// Re-applies a journaled tick.
    pub fn replay_tick(&mut self, now: Timestamp) -> Vec<ViolationRecord> {
        let due = self.due(now);
        self.publish(&due, now)
    }
}

#[cfg(test)]
mod tests;
