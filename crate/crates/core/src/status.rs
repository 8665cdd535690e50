//! Per-space red/amber/green status over a rolling window of published
//! violations.
//!
//! Expiry is lazy: nothing is removed when time passes, queries just look at
//! `(now - window, now]`. [`StatusEngine::purge_before`] exists only to bound
//! memory.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Timestamp;
use crate::pipeline::ViolationRecord;
use crate::twin::{TwinModel, ViolationType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatusConfig {
    pub window_seconds: i64,
    /// How many of the latest published violations a snapshot carries.
    pub recent_limit: usize,
}

impl Default for StatusConfig {
    fn default() -> Self {
        StatusConfig { window_seconds: 3600, recent_limit: 50 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatusError {
    #[error("unknown space {0:?}")]
    UnknownSpace(String),
    #[error("violation {0} has not been published")]
    UnpublishedViolation(String),
    #[error("status window must be positive")]
    InvalidConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RagLevel {
    Green,
    Amber,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagStatus {
    pub level: RagLevel,
    pub active_count: usize,
}

/// What a floor tile shows: the RAG level, unless the space is at risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayState {
    Green,
    Amber,
    Red,
    AtRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceStatus {
    pub space_id: String,
    pub rag: RagStatus,
    pub count: usize,
    pub last_violation_at: Option<Timestamp>,
    pub at_risk: bool,
    pub display_state: DisplayState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceStatusSnapshot {
    pub as_of: Timestamp,
    /// One entry per area, in depth-first model order.
    pub spaces: Vec<SpaceStatus>,
    /// Newest last.
    pub recent_violations: Vec<ViolationRecord>,
    pub total_published: usize,
}

impl SpaceStatusSnapshot {
    pub fn space(&self, space_id: &str) -> Option<&SpaceStatus> {
        self.spaces.iter().find(|s| s.space_id == space_id)
    }

    pub fn window_total(&self) -> usize {
        self.spaces.iter().map(|s| s.count).sum()
    }
}

/// Maps a window count through thresholds.
pub fn rag_level(count: usize, amber_min: u32, red_min: u32) -> RagLevel {
    if count >= red_min as usize {
        RagLevel::Red
    } else if count >= amber_min as usize {
        RagLevel::Amber
    } else {
        RagLevel::Green
    }
}

#[derive(Debug, Clone)]
pub struct StatusEngine {
    model: Arc<TwinModel>,
    config: StatusConfig,
    /// Published violations per space keyed by `(reported_at, arrival)`.
    published: HashMap<String, BTreeMap<(Timestamp, u64), ViolationType>>,
    at_risk: BTreeSet<String>,
    recent: VecDeque<ViolationRecord>,
    total_published: u64,
}

impl StatusEngine {
    pub fn new(model: Arc<TwinModel>, config: StatusConfig) -> Result<Self, StatusError> {
        if config.window_seconds <= 0 {
            return Err(StatusError::InvalidConfig);
        }
        Ok(StatusEngine {
            model,
            config,
            published: HashMap::new(),
            at_risk: BTreeSet::new(),
            recent: VecDeque::new(),
            total_published: 0,
        })
    }

    pub fn config(&self) -> &StatusConfig {
        &self.config
    }

    pub fn set_model(&mut self, model: Arc<TwinModel>) {
        self.model = model;
    }

    pub fn total_published(&self) -> u64 {
        self.total_published
    }

    fn require_space(&self, space_id: &str) -> Result<(), StatusError> {
        if self.model.space(space_id).is_some() {
            Ok(())
        } else {
            Err(StatusError::UnknownSpace(space_id.to_string()))
        }
    }

    pub fn record_violation(&mut self, v: &ViolationRecord, now: Timestamp) -> Result<RagStatus, StatusError> {
        let reported_at = v.reported_at.ok_or_else(|| StatusError::UnpublishedViolation(v.violation_id.clone()))?;
        let space = &v.binding.space_id;
        self.require_space(space)?;
        self.published
            .entry(space.clone())
            .or_default()
            .insert((reported_at, self.total_published), v.canonical.vtype);
        self.total_published += 1;
        self.recent.push_back(v.clone());
        while self.recent.len() > self.config.recent_limit {
            self.recent.pop_front();
        }
        self.rag_status(space, now)
    }

    fn window(&self, space_id: &str, now: Timestamp) -> impl Iterator<Item = (Timestamp, ViolationType)> + '_ {
        let lo = (now - self.config.window_seconds, u64::MAX);
        let hi = (now, u64::MAX);
        self.published
            .get(space_id)
            .into_iter()
            .flat_map(move |m| m.range((std::ops::Bound::Excluded(lo), std::ops::Bound::Included(hi))))
            .map(|(&(t, _), &v)| (t, v))
    }

    /// Status from violations reported in `(now - window, now]`.
    ///
    /// Thresholds are the strictest (smallest) among the enabled policies of
    /// the types present in the window, so an override on one type does not
    /// change how another type is counted.
    pub fn rag_status(&self, space_id: &str, now: Timestamp) -> Result<RagStatus, StatusError> {
        self.require_space(space_id)?;
        let mut count = 0;
        let mut types = BTreeSet::new();
        for (_, vtype) in self.window(space_id, now) {
            count += 1;
            types.insert(vtype);
        }
        let mut amber = u32::MAX;
        let mut red = u32::MAX;
        for vtype in types {
            let policy = self.model.policy_for(space_id, vtype).map_err(|_| StatusError::UnknownSpace(space_id.into()))?;
            if policy.enabled {
                amber = amber.min(policy.rag_amber_min);
                red = red.min(policy.rag_red_min);
            }
        }
        Ok(RagStatus { level: rag_level(count, amber, red), active_count: count })
    }

    fn last_violation_at(&self, space_id: &str, now: Timestamp) -> Option<Timestamp> {
        self.published
            .get(space_id)?
            .range(..=(now, u64::MAX))
            .next_back()
            .map(|(&(t, _), _)| t)
    }

    pub fn set_at_risk(&mut self, space_id: &str) -> Result<(), StatusError> {
        self.require_space(space_id)?;
        self.at_risk.insert(space_id.to_string());
        Ok(())
    }

    /// Clears the flag after sanitization. Returns whether it was set.
    pub fn clear_at_risk(&mut self, space_id: &str) -> Result<bool, StatusError> {
        self.require_space(space_id)?;
        Ok(self.at_risk.remove(space_id))
    }

    pub fn at_risk_spaces(&self) -> &BTreeSet<String> {
        &self.at_risk
    }

    pub fn snapshot(&self, now: Timestamp) -> SpaceStatusSnapshot {
        let spaces = self
            .model
            .areas()
            .map(|area| {
                let id = &area.space_id;
                let rag = self.rag_status(id, now).expect("areas come from the model");
                let at_risk = self.at_risk.contains(id);
                let display_state = match (at_risk, rag.level) {
                    (true, _) => DisplayState::AtRisk,
                    (false, RagLevel::Green) => DisplayState::Green,
                    (false, RagLevel::Amber) => DisplayState::Amber,
                    (false, RagLevel::Red) => DisplayState::Red,
                };
                SpaceStatus {
                    space_id: id.clone(),
                    rag,
                    count: rag.active_count,
                    last_violation_at: self.last_violation_at(id, now),
                    at_risk,
                    display_state,
                }
            })
            .collect();
        SpaceStatusSnapshot {
            as_of: now,
            spaces,
            recent_violations: self.recent.iter().filter(|v| v.reported_at.is_some_and(|t| t <= now)).cloned().collect(),
            total_published: self.total_published as usize,
        }
    }

    /// Forgets violations that can no longer fall inside any window ending at
    /// or after `now`.
    pub fn purge_before(&mut self, now: Timestamp) {
        let cutoff = (now - self.config.window_seconds, u64::MAX);
        for m in self.published.values_mut() {
            *m = m.split_off(&cutoff);
        }
        self.published.retain(|_, m| !m.is_empty());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, event, DAY0};
    use crate::pipeline::violation_id;
    use crate::twin::{PolicyEntry, Priority};

    const T: Timestamp = DAY0 + 8 * 3600;

    fn published(n: usize, vtype: ViolationType, space: &str, at: Timestamp) -> ViolationRecord {
        let model = fixtures::model();
        let e = event(&format!("e{n}"), vtype, space, at);
        ViolationRecord {
            violation_id: violation_id(n),
            binding: model.map_event(&e).unwrap(),
            canonical: e,
            duplicate_event_ids: Vec::new(),
            priority: Priority::DelayTolerant,
            detected_at: at,
            reported_at: Some(at),
        }
    }

    fn engine() -> StatusEngine {
        StatusEngine::new(fixtures::model(), StatusConfig::default()).unwrap()
    }

    #[test]
    fn quiet_space_goes_amber_then_red() {
        let mut s = engine();
        assert_eq!(s.rag_status("cooking", T).unwrap(), RagStatus { level: RagLevel::Green, active_count: 0 });
        let levels: Vec<_> = (0..5)
            .map(|i| s.record_violation(&published(i, ViolationType::Hairnet, "cooking", T), T).unwrap().level)
            .collect();
        assert_eq!(levels, [RagLevel::Amber, RagLevel::Amber, RagLevel::Amber, RagLevel::Red, RagLevel::Red]);
        assert_eq!(s.rag_status("cooking", T).unwrap().active_count, 5);
    }

    #[test]
    fn window_edges() {
        let mut s = engine();
        let now = T + 3599;
        for i in 0..4 {
            s.record_violation(&published(i, ViolationType::Apron, "packing", T), T).unwrap();
        }
        assert_eq!(s.rag_status("packing", now).unwrap().level, RagLevel::Red);
        // at T + 3600 the window (T, T + 3600] excludes T
        assert_eq!(s.rag_status("packing", now + 1).unwrap().level, RagLevel::Green);
        assert_eq!(s.rag_status("packing", now + 2).unwrap(), RagStatus { level: RagLevel::Green, active_count: 0 });
        // not yet reported at T - 1
        assert_eq!(s.rag_status("packing", T - 1).unwrap().active_count, 0);
    }

    #[test]
    fn override_raises_amber_threshold() {
        let mut doc = fixtures::doc();
        doc.spaces[2].policy.insert(
            ViolationType::FaceMask,
            PolicyEntry { rag_amber_min: 3, rag_red_min: 6, ..PolicyEntry::default_for(ViolationType::FaceMask) },
        );
        let model = Arc::new(TwinModel::from_document(doc).unwrap());
        let mut s = StatusEngine::new(model, StatusConfig::default()).unwrap();
        for i in 0..2 {
            s.record_violation(&published(i, ViolationType::FaceMask, "cooking", T), T).unwrap();
        }
        assert_eq!(s.rag_status("cooking", T).unwrap().level, RagLevel::Green);
        // a hairnet violation brings the default thresholds into play
        s.record_violation(&published(2, ViolationType::Hairnet, "cooking", T), T).unwrap();
        assert_eq!(s.rag_status("cooking", T).unwrap().level, RagLevel::Amber);
    }

    #[test]
    fn errors() {
        let mut s = engine();
        let mut v = published(0, ViolationType::Mopping, "cooking", T);
        v.reported_at = None;
        assert_eq!(s.record_violation(&v, T), Err(StatusError::UnpublishedViolation("v-00000001".into())));
        assert_eq!(s.rag_status("loading-dock", T), Err(StatusError::UnknownSpace("loading-dock".into())));
        assert!(StatusEngine::new(fixtures::model(), StatusConfig { window_seconds: 0, recent_limit: 1 }).is_err());
    }

    #[test]
    fn snapshot_covers_every_area_and_is_pure() {
        let mut s = engine();
        let fresh = s.snapshot(T);
        let ids: Vec<_> = fresh.spaces.iter().map(|x| x.space_id.as_str()).collect();
        assert_eq!(ids, ["cooking", "packing", "stores"]);
        assert!(fresh.spaces.iter().all(|x| x.display_state == DisplayState::Green));

        let mut v = published(0, ViolationType::Hairnet, "stores", T);
        v.duplicate_event_ids = (0..10).map(|i| format!("d{i}")).collect();
        s.record_violation(&v, T).unwrap();
        s.set_at_risk("cooking").unwrap();
        let a = s.snapshot(T + 10);
        assert_eq!(a, s.snapshot(T + 10));
        assert_eq!(a.space("stores").unwrap().count, 1);
        assert_eq!(a.space("stores").unwrap().last_violation_at, Some(T));
        assert_eq!(a.space("cooking").unwrap().display_state, DisplayState::AtRisk);
        assert_eq!(a.window_total(), 1);
        assert_eq!(a.recent_violations.len(), 1);

        assert!(s.clear_at_risk("cooking").unwrap());
        assert!(!s.clear_at_risk("cooking").unwrap());
        assert_eq!(s.snapshot(T + 10).space("cooking").unwrap().display_state, DisplayState::Green);
    }

    #[test]
    fn recent_list_is_bounded() {
        let mut s = StatusEngine::new(fixtures::model(), StatusConfig { window_seconds: 3600, recent_limit: 3 }).unwrap();
        for i in 0..5 {
            s.record_violation(&published(i, ViolationType::Gloves, "cooking", T + i as i64), T + i as i64).unwrap();
        }
        let snap = s.snapshot(T + 10);
        let ids: Vec<_> = snap.recent_violations.iter().map(|v| v.violation_id.as_str()).collect();
        assert_eq!(ids, ["v-00000003", "v-00000004", "v-00000005"]);
        assert_eq!(snap.total_published, 5);
    }

    #[test]
    fn purge_keeps_window() {
        let mut s = engine();
        s.record_violation(&published(0, ViolationType::Gloves, "cooking", T), T).unwrap();
        s.record_violation(&published(1, ViolationType::Gloves, "cooking", T + 3000), T + 3000).unwrap();
        let before = s.rag_status("cooking", T + 3500).unwrap();
        s.purge_before(T + 3500);
        assert_eq!(s.rag_status("cooking", T + 3500).unwrap(), before);
        assert_eq!(s.rag_status("cooking", T + 3600).unwrap().active_count, 1);
    }
}
