//! The wired system: pipeline → status engine, plus the contact tracer,
//! behind a write-ahead journal and a monotonic clock.
//!
//! Every state change is journaled before it is applied. [`System::recover`]
//! replays a journal into a fresh system and reaches the same state.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    contact_tracing_events, ContactTracer, InfectionReport, PositionPing, TraceConfig, TraceError, TraceResult,
    VisitInterval,
};
use crate::event::AnomalyEvent;
use crate::geom::Timestamp;
use crate::journal::{Journal, JournalError, JournalSink, PersistedLogRecord, RecordKind};
use crate::pipeline::{
    BatchSchedule, CredentialStore, DedupConfig, IngestOutcome, IngestRecord, IngestResult, Pipeline, PipelineConfig,
    PipelineError, PublishRecord, ViolationRecord,
};
use crate::status::{SpaceStatusSnapshot, StatusConfig, StatusEngine, StatusError};
use crate::twin::{ModelError, Person, TwinModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub dedup: DedupConfig,
    pub schedule: BatchSchedule,
    pub status: StatusConfig,
    pub trace: TraceConfig,
}

impl SystemConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { dedup: self.dedup, schedule: self.schedule }
    }
}

/// Operator actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Sanitized { space_id: String },
    Reassign { badge_id: String, space_id: String },
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Status(#[from] StatusError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("journal record {seq} could not be replayed: {message}")]
    Replay { seq: u64, message: String },
}

/// Result of a ping batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PingOutcome {
    pub accepted: usize,
    /// Social-distancing events raised by the batch, with their ingest
    /// outcomes.
    pub raised: Vec<(AnomalyEvent, IngestOutcome)>,
}

/// Everything recovery must reproduce, in comparable form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    pub violations: Vec<ViolationRecord>,
    pub alert_order: Vec<String>,
    pub queued: Vec<String>,
    pub snapshot: SpaceStatusSnapshot,
    pub visits: Vec<VisitInterval>,
    pub traces: Vec<TraceResult>,
    pub rate_windows: BTreeMap<String, usize>,
    pub roster: Vec<Person>,
}

pub struct System {
    model: Arc<TwinModel>,
    config: SystemConfig,
    pipeline: Pipeline,
    status: StatusEngine,
    tracer: ContactTracer,
    journal: Journal,
    clock: Option<Timestamp>,
    last_tick: Option<Timestamp>,
    replaying: bool,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("model", &self.model.model_id())
            .field("clock", &self.clock)
            .field("violations", &self.pipeline.records().len())
            .finish_non_exhaustive()
    }
}

impl System {
    pub fn new(
        model: Arc<TwinModel>,
        credentials: CredentialStore,
        config: SystemConfig,
        journal: Journal,
    ) -> Result<Self, SystemError> {
        if !config.trace.is_valid() {
            return Err(SystemError::InvalidConfig(format!("trace settings out of range: {:?}", config.trace)));
        }
        Ok(System {
            pipeline: Pipeline::new(model.clone(), credentials, config.pipeline())?,
            status: StatusEngine::new(model.clone(), config.status)?,
            tracer: ContactTracer::new(model.clone(), config.trace),
            model,
            config,
            journal,
            clock: None,
            last_tick: None,
            replaying: false,
        })
    }

    /// Rebuilds a system from journal records, then continues journaling to
    /// `sink` after the last replayed sequence number.
    pub fn recover(
        model: Arc<TwinModel>,
        credentials: CredentialStore,
        config: SystemConfig,
        records: &[PersistedLogRecord],
        sink: Box<dyn JournalSink>,
    ) -> Result<Self, SystemError> {
        let mut sys = System::new(model, credentials, config, Journal::discard())?;
        sys.replaying = true;
        for record in records {
            sys.apply(record).map_err(|e| match e {
                replay @ SystemError::Replay { .. } => replay,
                other => SystemError::Replay { seq: record.seq, message: other.to_string() },
            })?;
        }
        sys.replaying = false;
        sys.journal = Journal::resume(sink, records.last().map_or(0, |r| r.seq));
        Ok(sys)
    }

    pub fn model(&self) -> &Arc<TwinModel> {
        &self.model
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn status(&self) -> &StatusEngine {
        &self.status
    }

    pub fn tracer(&self) -> &ContactTracer {
        &self.tracer
    }

    /// Latest time seen, if any.
    pub fn clock(&self) -> Option<Timestamp> {
        self.clock
    }

    pub fn snapshot(&self, at: Timestamp) -> SpaceStatusSnapshot {
        self.status.snapshot(at)
    }

    pub fn sync(&mut self) -> Result<(), SystemError> {
        Ok(self.journal.sync()?)
    }

    /// Moves the clock forward (never back) and fires the batch ticks that
    /// fall due. Returns the effective time.
    pub fn advance_clock(&mut self, now: Timestamp) -> Result<Timestamp, SystemError> {
        let now = self.clock.map_or(now, |c| c.max(now));
        let schedule = self.config.schedule;
        if let Some(last) = self.last_tick {
            let mut tick = schedule.tick_at_or_before(last) + schedule.tick_interval_seconds;
            while tick <= now && self.pipeline.queued().next().is_some() {
                let published = if self.replaying {
                    self.pipeline.replay_tick(tick)
                } else {
                    self.pipeline.run_batch_tick(tick, &mut self.journal)?
                };
                for v in &published {
                    self.status.record_violation(v, tick)?;
                }
                tick += schedule.tick_interval_seconds;
            }
        }
        self.last_tick = Some(schedule.tick_at_or_before(now));
        self.clock = Some(now);
        Ok(now)
    }

    /// Time of the first batch tick strictly after the clock.
    pub fn next_tick(&self) -> Option<Timestamp> {
        let s = self.config.schedule;
        self.clock.map(|c| s.tick_at_or_before(c) + s.tick_interval_seconds)
    }

    pub fn ingest(&mut self, body: &[u8], api_key: &str, now: Timestamp) -> Result<IngestResult, SystemError> {
        let now = self.advance_clock(now)?;
        let result = self.pipeline.ingest(body, api_key, now, &mut self.journal)?;
        if let Some(v) = &result.published {
            self.status.record_violation(v, now)?;
        }
        Ok(result)
    }

    fn ingest_trusted(&mut self, event: &AnomalyEvent, now: Timestamp) -> Result<IngestResult, SystemError> {
        let result = self.pipeline.ingest_trusted(event, now, &mut self.journal)?;
        if let Some(v) = &result.published {
            self.status.record_violation(v, now)?;
        }
        Ok(result)
    }

    /// Stores a batch of pings (rejected whole if any ping is invalid) and
    /// forwards any social-distancing violations they complete.
    pub fn record_pings(&mut self, pings: &[PositionPing], now: Timestamp) -> Result<PingOutcome, SystemError> {
        for p in pings {
            self.tracer.validate_ping(p)?;
        }
        let now = self.advance_clock(now)?;
        self.journal.append(RecordKind::Ping, now, &pings)?;
        let violations = self.tracer.record_pings(pings)?;
        let mut raised = Vec::with_capacity(violations.len());
        for v in &violations {
            let event = self.tracer.proximity_event(v);
            let result = self.ingest_trusted(&event, now)?;
            raised.push((event, result.outcome));
        }
        Ok(PingOutcome { accepted: pings.len(), raised })
    }

    /// Traces an infection report, flags the at-risk spaces and raises one
    /// contact-tracing event per space.
    pub fn report_infection(&mut self, report: &InfectionReport, now: Timestamp) -> Result<TraceResult, SystemError> {
        if self.model.person(&report.badge_id).is_none() {
            return Err(TraceError::UnknownBadge(report.badge_id.clone()).into());
        }
        if report.lookback_seconds <= 0 {
            return Err(TraceError::InvalidLookback.into());
        }
        if self.tracer.trace_result(&report.report_id).is_some() {
            return Err(TraceError::DuplicateReport(report.report_id.clone()).into());
        }
        let now = self.advance_clock(now)?;
        self.journal.append(RecordKind::Infection, now, report)?;
        let result = self.apply_infection(report)?;
        for event in contact_tracing_events(&result) {
            self.ingest_trusted(&event, now)?;
        }
        Ok(result)
    }

    fn apply_infection(&mut self, report: &InfectionReport) -> Result<TraceResult, SystemError> {
        let result = self.tracer.trace(report)?;
        for space in result.space_ids() {
            self.status.set_at_risk(space)?;
        }
        Ok(result)
    }

    /// Clears a space's at-risk flag. Returns whether it was set.
    pub fn mark_sanitized(&mut self, space_id: &str, now: Timestamp) -> Result<bool, SystemError> {
        if !self.model.is_area(space_id) {
            return Err(StatusError::UnknownSpace(space_id.to_string()).into());
        }
        let now = self.advance_clock(now)?;
        let action = Action::Sanitized { space_id: space_id.to_string() };
        self.journal.append(RecordKind::Action, now, &action)?;
        Ok(self.status.clear_at_risk(space_id)?)
    }

    pub fn reassign(&mut self, badge_id: &str, space_id: &str, now: Timestamp) -> Result<(), SystemError> {
        let next = Arc::new(self.model.reassign_person(badge_id, space_id)?);
        let now = self.advance_clock(now)?;
        let action = Action::Reassign { badge_id: badge_id.to_string(), space_id: space_id.to_string() };
        self.journal.append(RecordKind::Action, now, &action)?;
        self.set_model(next);
        Ok(())
    }

    fn set_model(&mut self, model: Arc<TwinModel>) {
        self.pipeline.set_model(model.clone());
        self.status.set_model(model.clone());
        self.tracer.set_model(model.clone());
        self.model = model;
    }

    fn apply(&mut self, record: &PersistedLogRecord) -> Result<(), SystemError> {
        let replay_err = |message: String| SystemError::Replay { seq: record.seq, message };
        let body = |r: &PersistedLogRecord| r.body.clone();
        let now = self.advance_clock(record.at)?;
        match record.kind {
            RecordKind::Ingest => {
                let ingest: IngestRecord = serde_json::from_value(body(record)).map_err(|e| replay_err(e.to_string()))?;
                if let Some(v) = self.pipeline.replay_ingest(&ingest)? {
                    self.status.record_violation(&v, now)?;
                }
            }
            RecordKind::Publish => {
                let publish: PublishRecord =
                    serde_json::from_value(body(record)).map_err(|e| replay_err(e.to_string()))?;
                for id in &publish.violation_ids {
                    let ok = self.pipeline.record(id).is_some_and(|v| v.reported_at == Some(record.at));
                    if !ok {
                        return Err(replay_err(format!("{id} was not published at {}", record.at)));
                    }
                }
            }
            RecordKind::Ping => {
                let pings: Vec<PositionPing> =
                    serde_json::from_value(body(record)).map_err(|e| replay_err(e.to_string()))?;
                // the events these raise come back through their own ingest
                // records; only keep the id counter in step
                for v in self.tracer.record_pings(&pings)? {
                    self.tracer.proximity_event(&v);
                }
            }
            RecordKind::Infection => {
                let report: InfectionReport =
                    serde_json::from_value(body(record)).map_err(|e| replay_err(e.to_string()))?;
                self.apply_infection(&report)?;
            }
            RecordKind::Action => {
                let action: Action = serde_json::from_value(body(record)).map_err(|e| replay_err(e.to_string()))?;
                match action {
                    Action::Sanitized { space_id } => {
                        self.status.clear_at_risk(&space_id)?;
                    }
                    Action::Reassign { badge_id, space_id } => {
                        let next = Arc::new(self.model.reassign_person(&badge_id, &space_id)?);
                        self.set_model(next);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn export_state(&self, at: Timestamp) -> SystemState {
        SystemState {
            violations: self.pipeline.records().to_vec(),
            alert_order: self.pipeline.alerts_since(0).map(|(_, v)| v.violation_id.clone()).collect(),
            queued: self.pipeline.queued().map(|v| v.violation_id.clone()).collect(),
            snapshot: self.status.snapshot(at),
            visits: self.tracer.visits(),
            traces: self.tracer.traces().cloned().collect(),
            rate_windows: self.pipeline.rate_limiter().snapshot(at),
            roster: self.model.people().to_vec(),
        }
    }
}
