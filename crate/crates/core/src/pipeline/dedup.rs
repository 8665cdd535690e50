use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::event::AnomalyEvent;
use crate::geom::Timestamp;
use crate::twin::ViolationType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    /// Only records whose canonical event is at most this far away in time
    /// are candidates.
    pub window_seconds: i64,
    pub tau_seconds: f64,
    pub rho_meters: f64,
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig { window_seconds: 300, tau_seconds: 120.0, rho_meters: 3.0, threshold: 0.6 }
    }
}

impl DedupConfig {
    pub fn is_valid(&self) -> bool {
        self.window_seconds > 0
            && self.tau_seconds > 0.0
            && self.rho_meters > 0.0
            && self.threshold > 0.0
            && self.threshold <= 1.0
    }
}

/// Similarity of two detections in `[0, 1]`.
///
/// Zero unless type and space match. Otherwise the product of a temporal
/// term `exp(-|dt| / tau)` and a spatial term `1 - min(d, rho) / rho`; the
/// spatial term is 1 when either event lacks a location.
pub fn similarity(a: &AnomalyEvent, b: &AnomalyEvent, cfg: &DedupConfig) -> f64 {
    if a.vtype != b.vtype || a.space_id != b.space_id {
        return 0.0;
    }
    let dt = (a.timestamp - b.timestamp).unsigned_abs() as f64;
    let temporal = (-dt / cfg.tau_seconds).exp();
    let spatial = match (&a.location, &b.location) {
        (Some(p), Some(q)) => 1.0 - p.distance(q).min(cfg.rho_meters) / cfg.rho_meters,
        _ => 1.0,
    };
    temporal * spatial
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupDecision {
    New,
    /// Index of the matching violation record.
    DuplicateOf(usize),
}

/// Canonical events of open violation records, partitioned by
/// `(space_id, vtype)` and ordered by time within a partition.
#[derive(Debug, Clone, Default)]
pub struct Deduplicator {
    partitions: HashMap<(String, ViolationType), BTreeMap<(Timestamp, usize), AnomalyEvent>>,
}

impl Deduplicator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Best-scoring record within the time window, if it clears the
    /// threshold. Ties go to the lowest record index.
    pub fn deduplicate(&self, event: &AnomalyEvent, cfg: &DedupConfig) -> DedupDecision {
        let Some(partition) = self.partitions.get(&(event.space_id.clone(), event.vtype)) else {
            return DedupDecision::New;
        };
        let lo = (event.timestamp.saturating_sub(cfg.window_seconds), usize::MIN);
        let hi = (event.timestamp.saturating_add(cfg.window_seconds), usize::MAX);
        let mut best: Option<(f64, usize)> = None;
        for (&(_, idx), canonical) in partition.range(lo..=hi) {
            let score = similarity(event, canonical, cfg);
            if score < cfg.threshold {
                continue;
            }
            best = match best {
                Some((s, i)) if s > score || (s == score && i < idx) => Some((s, i)),
                _ => Some((score, idx)),
            };
        }
        match best {
            Some((_, idx)) => DedupDecision::DuplicateOf(idx),
            None => DedupDecision::New,
        }
    }

    pub fn insert(&mut self, idx: usize, canonical: &AnomalyEvent) {
        self.partitions
            .entry((canonical.space_id.clone(), canonical.vtype))
            .or_default()
            .insert((canonical.timestamp, idx), canonical.clone());
    }

    /// Drops canonical events older than `before`; they can no longer
    /// match anything arriving at or after `before + window`.
    pub fn purge_before(&mut self, before: Timestamp) {
        for partition in self.partitions.values_mut() {
            *partition = partition.split_off(&(before, usize::MIN));
        }
        self.partitions.retain(|_, p| !p.is_empty());
    }
}
