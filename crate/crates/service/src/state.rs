//! Shared service state: one [`System`] behind a lock, the alert fan-out,
//! and the clock.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use sopwatch_core::pipeline::ViolationRecord;
use sopwatch_core::system::System;
use sopwatch_core::Timestamp;

use crate::config::{ConfigHashes, LoadedConfig, StartupError};
use crate::logfile::open_log;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Wall-clock time; batch ticks fire in the background.
    System,
    /// Time only moves with the timestamps of incoming data.
    Simulated,
}

/// A published violation and its position in the alert stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub seq: usize,
    pub violation: ViolationRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct ServiceInfo {
    pub model_id: String,
    pub areas: usize,
    pub people: usize,
    pub clock_mode: ClockMode,
    pub hashes: ConfigHashes,
    pub recovered_records: usize,
}

pub struct Core {
    pub system: System,
    alert_cursor: usize,
}

pub struct AppState {
    core: Mutex<Core>,
    alerts: broadcast::Sender<Alert>,
    pub info: ServiceInfo,
    pub loaded: LoadedConfig,
}

pub type Shared = Arc<AppState>;

fn wall_clock() -> Timestamp {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as Timestamp).unwrap_or(0)
}

impl AppState {
    /// Opens the journal, replays it, and resumes appending.
    pub fn start(loaded: LoadedConfig, clock_mode: ClockMode) -> Result<Shared, StartupError> {
        let log = open_log(&loaded.log_dir)?;
        let recovered_records = log.records.len();
        let system = System::recover(
            loaded.model.clone(),
            loaded.credentials.clone(),
            loaded.config.system(),
            &log.records,
            Box::new(log.sink),
        )
        .map_err(|e| StartupError::Invalid { path: log.path.clone(), message: e.to_string() })?;
        if recovered_records > 0 {
            tracing::info!(records = recovered_records, "recovered state from journal");
        }
        let alert_cursor = system.pipeline().alert_count();
        let (alerts, _) = broadcast::channel(1024);
        let model = system.model();
        let info = ServiceInfo {
            model_id: model.model_id().to_string(),
            areas: model.area_count(),
            people: model.people().len(),
            clock_mode,
            hashes: loaded.hashes.clone(),
            recovered_records,
        };
        Ok(Arc::new(AppState { core: Mutex::new(Core { system, alert_cursor }), alerts, info, loaded }))
    }

    fn lock(&self) -> MutexGuard<'_, Core> {
        // a panic mid-request leaves the journal ahead of memory at worst;
        // recovery on restart reconciles that
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Current service time. In simulated mode `hint` (a timestamp from
    /// the request data) moves the clock forward.
    fn now(&self, core: &Core, hint: Option<Timestamp>) -> Timestamp {
        match self.info.clock_mode {
            ClockMode::System => wall_clock(),
            ClockMode::Simulated => match (core.system.clock(), hint) {
                (Some(c), Some(h)) => c.max(h),
                (c, h) => c.or(h).unwrap_or(0),
            },
        }
    }

    /// Runs a mutation at the current time, then makes it durable and fans
    /// out any alerts it published.
    pub fn mutate<R>(&self, hint: Option<Timestamp>, f: impl FnOnce(&mut System, Timestamp) -> R) -> R {
        let mut core = self.lock();
        let now = self.now(&core, hint);
        let out = f(&mut core.system, now);
        if let Err(e) = core.system.sync() {
            tracing::error!(error = %e, "journal sync failed");
        }
        let cursor = core.alert_cursor;
        let fresh: Vec<Alert> = core
            .system
            .pipeline()
            .alerts_since(cursor)
            .map(|(seq, v)| Alert { seq, violation: v.clone() })
            .collect();
        core.alert_cursor += fresh.len();
        for alert in fresh {
            // no subscribers is fine
            let _ = self.alerts.send(alert);
        }
        out
    }

    /// Read-only access at the current time.
    pub fn read<R>(&self, f: impl FnOnce(&System, Timestamp) -> R) -> R {
        let core = self.lock();
        let now = self.now(&core, None);
        f(&core.system, now)
    }

    /// Alerts from `since` onwards plus a receiver for everything after.
    /// Taken under the lock, so nothing is missed or repeated between them.
    pub fn subscribe(&self, since: usize) -> (Vec<Alert>, broadcast::Receiver<Alert>) {
        let core = self.lock();
        let rx = self.alerts.subscribe();
        let backlog = core
            .system
            .pipeline()
            .alerts_since(since)
            .map(|(seq, v)| Alert { seq, violation: v.clone() })
            .collect();
        (backlog, rx)
    }

    /// Fires due batch ticks (system clock only).
    pub fn tick(&self) {
        if self.info.clock_mode == ClockMode::System {
            if let Err(e) = self.mutate(None, |sys, now| sys.advance_clock(now)) {
                tracing::error!(error = %e, "batch tick failed");
            }
        }
    }

    pub fn flush(&self) {
        if let Err(e) = self.lock().system.sync() {
            tracing::error!(error = %e, "journal sync failed");
        }
    }
}
