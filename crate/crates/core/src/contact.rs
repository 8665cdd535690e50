//! Badge positions, visit segmentation, proximity detection and contact
//! tracing.
//!
//! Pings carry a pseudonymous badge id and nothing else about the person.
//! Events produced here (social distancing, contact tracing) never carry
//! badge ids at all.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::AnomalyEvent;
use crate::geom::{Point, Timestamp};
use crate::twin::{SpaceKind, TwinModel, ViolationType};

/// Source id used for events raised by the location service.
pub const LOCATION_SOURCE: &str = "location-service";

/// Two pings are compared only if they are at most this far apart in time.
pub const PAIRING_TOLERANCE_SECONDS: i64 = 1;

pub const DEFAULT_LOOKBACK_SECONDS: i64 = 172_800;

fn default_lookback() -> i64 {
    DEFAULT_LOOKBACK_SECONDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionPing {
    pub badge_id: String,
    pub space_id: String,
    pub location: Point,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VisitInterval {
    pub badge_id: String,
    pub space_id: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Closed interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn overlaps(&self, start: Timestamp, end: Timestamp) -> bool {
        start <= self.end && end >= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityViolation {
    /// Sorted pair.
    pub badges: (String, String),
    pub space_id: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub min_distance: f64,
    /// Midpoint of the pair at their closest sample.
    pub location: Point,
}

impl ProximityViolation {
    pub fn duration(&self) -> i64 {
        self.end - self.start
    }

    /// The anonymous event reported for this violation.
    pub fn to_event(&self, event_id: String) -> AnomalyEvent {
        AnomalyEvent {
            event_id,
            source_id: LOCATION_SOURCE.to_string(),
            vtype: ViolationType::SocialDistancing,
            space_id: self.space_id.clone(),
            timestamp: self.end,
            location: Some(self.location),
            confidence: 1.0,
            payload: Some(serde_json::json!({
                "min_distance": self.min_distance,
                "duration": self.duration(),
            })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfectionReport {
    pub report_id: String,
    pub badge_id: String,
    pub reported_at: Timestamp,
    #[serde(default = "default_lookback")]
    pub lookback_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtRiskSpace {
    pub space_id: String,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceResult {
    pub report_id: String,
    pub badge_id: String,
    pub reported_at: Timestamp,
    /// Sorted by space id.
    pub at_risk_spaces: Vec<AtRiskSpace>,
    pub direct_contacts: Vec<String>,
    pub indirect_contacts: Vec<String>,
}

impl TraceResult {
    pub fn is_empty(&self) -> bool {
        self.at_risk_spaces.is_empty() && self.direct_contacts.is_empty() && self.indirect_contacts.is_empty()
    }

    /// Direct and indirect contacts together, sorted.
    pub fn at_risk_people(&self) -> BTreeSet<&str> {
        self.direct_contacts.iter().chain(&self.indirect_contacts).map(String::as_str).collect()
    }

    pub fn space_ids(&self) -> impl Iterator<Item = &str> {
        self.at_risk_spaces.iter().map(|s| s.space_id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub distance_threshold: f64,
    /// Shortest proximity run raised as a live social-distancing alert.
    pub live_min_duration: i64,
    /// Cumulative proximity that makes someone a direct contact.
    pub trace_min_duration: i64,
    pub visit_gap_tolerance: i64,
    pub min_visit: i64,
    pub linger_seconds: i64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            distance_threshold: 2.0,
            live_min_duration: 10,
            trace_min_duration: 30,
            visit_gap_tolerance: 60,
            min_visit: 5,
            linger_seconds: 3600,
        }
    }
}

impl TraceConfig {
    pub fn is_valid(&self) -> bool {
        self.distance_threshold > 0.0
            && self.live_min_duration > 0
            && self.trace_min_duration > 0
            && self.visit_gap_tolerance > 0
            && self.min_visit > 0
            && self.linger_seconds > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("unknown badge {0:?}")]
    UnknownBadge(String),
    #[error("unknown space {0:?}")]
    UnknownSpace(String),
    #[error("ping for {badge} at {timestamp} lies outside {space}")]
    LocationOutOfBounds { badge: String, space: String, timestamp: Timestamp },
    #[error("lookback must be positive")]
    InvalidLookback,
    #[error("report {0:?} already exists")]
    DuplicateReport(String),
}

/// Splits one badge's pings into visits. Pings of several badges may be
/// mixed; the result is ordered by badge, then time.
pub fn segment_visits(pings: &[PositionPing], cfg: &TraceConfig) -> Vec<VisitInterval> {
    let mut by_badge: BTreeMap<&str, Vec<(Timestamp, &str)>> = BTreeMap::new();
    for p in pings {
        by_badge.entry(&p.badge_id).or_default().push((p.timestamp, &p.space_id));
    }
    let mut out = Vec::new();
    for (badge, mut seq) in by_badge {
        seq.sort();
        segment_sorted(badge, seq.into_iter(), cfg, &mut out);
    }
    out
}

fn segment_sorted<'a, S: AsRef<str> + PartialEq + 'a>(
    badge: &str,
    pings: impl Iterator<Item = (Timestamp, S)>,
    cfg: &TraceConfig,
    out: &mut Vec<VisitInterval>,
) {
    let mut cur: Option<(S, Timestamp, Timestamp)> = None;
    let close = |run: (S, Timestamp, Timestamp), out: &mut Vec<VisitInterval>| {
        let (space, start, end) = run;
        if end - start >= cfg.min_visit {
            out.push(VisitInterval { badge_id: badge.to_string(), space_id: space.as_ref().to_string(), start, end });
        }
    };
    for (t, space) in pings {
        cur = match cur {
            Some((s, start, last)) if s == space && t - last <= cfg.visit_gap_tolerance => Some((s, start, t)),
            Some(run) => {
                close(run, out);
                Some((space, t, t))
            }
            None => Some((space, t, t)),
        };
    }
    if let Some(run) = cur {
        close(run, out);
    }
}

/// A distance measurement between two badges.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sample {
    lo: Timestamp,
    hi: Timestamp,
    dist: f64,
    mid: Point,
}

/// One badge's positions in one space: time-sorted, one per timestamp.
type Track = Vec<(Timestamp, Point)>;

fn nearest(track: &[(Timestamp, Point)], t: Timestamp) -> Option<(Timestamp, Point)> {
    let i = track.partition_point(|&(u, _)| u < t);
    let before = i.checked_sub(1).map(|j| track[j]);
    let after = track.get(i).copied();
    match (before, after) {
        (Some(b), Some(a)) => Some(if t - b.0 <= a.0 - t { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Nearest-in-time pairings from both sides, within the tolerance, sorted.
fn pair_samples(a: &[(Timestamp, Point)], b: &[(Timestamp, Point)]) -> Vec<Sample> {
    let mut samples = Vec::new();
    for (from, to) in [(a, b), (b, a)] {
        for &(t, p) in from {
            if let Some((u, q)) = nearest(to, t) {
                // distance and midpoint are symmetric, so both sides agree
                if (t - u).abs() <= PAIRING_TOLERANCE_SECONDS {
                    samples.push(Sample { lo: t.min(u), hi: t.max(u), dist: p.distance(&q), mid: p.midpoint(&q) });
                }
            }
        }
    }
    samples.sort_by(|x, y| (x.lo, x.hi).cmp(&(y.lo, y.hi)).then(x.dist.total_cmp(&y.dist)));
    samples.dedup_by(|x, y| x.lo == y.lo && x.hi == y.hi && x.dist == y.dist);
    samples
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    start: Timestamp,
    end: Timestamp,
    last_lo: Timestamp,
    min_dist: f64,
    mid: Point,
}

/// Maximal stretches of samples closer than the threshold. A sample at or
/// beyond the threshold, or a silence longer than the gap tolerance, ends a
/// run.
fn proximity_runs(samples: &[Sample], cfg: &TraceConfig) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut cur: Option<Run> = None;
    for s in samples {
        if s.dist >= cfg.distance_threshold {
            runs.extend(cur.take());
            continue;
        }
        cur = match cur {
            Some(mut r) if s.lo - r.last_lo <= cfg.visit_gap_tolerance => {
                r.end = r.end.max(s.hi);
                r.last_lo = s.lo;
                if s.dist < r.min_dist {
                    r.min_dist = s.dist;
                    r.mid = s.mid;
                }
                Some(r)
            }
            prev => {
                runs.extend(prev);
                Some(Run { start: s.lo, end: s.hi, last_lo: s.lo, min_dist: s.dist, mid: s.mid })
            }
        };
    }
    runs.extend(cur);
    runs
}

/// Groups pings into per-(space, badge) tracks.
fn tracks<'a>(pings: impl Iterator<Item = &'a PositionPing>) -> BTreeMap<&'a str, BTreeMap<&'a str, Track>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, Track>> = BTreeMap::new();
    for p in pings {
        out.entry(&p.space_id).or_default().entry(&p.badge_id).or_default().push((p.timestamp, p.location));
    }
    for badges in out.values_mut() {
        for track in badges.values_mut() {
            // stable: the first ping of a given second wins
            track.sort_by_key(|&(t, _)| t);
            track.dedup_by_key(|&mut (t, _)| t);
        }
    }
    out
}

/// Social-distancing violations among pings from one or more spaces,
/// ordered by space, start time, then badge pair.
pub fn detect_proximity_violations(pings: &[PositionPing], cfg: &TraceConfig) -> Vec<ProximityViolation> {
    let mut out = Vec::new();
    for (space, badges) in tracks(pings.iter()) {
        let list: Vec<_> = badges.iter().collect();
        for (i, (a, ta)) in list.iter().enumerate() {
            for (b, tb) in &list[i + 1..] {
                for run in proximity_runs(&pair_samples(ta, tb), cfg) {
                    if run.end - run.start >= cfg.live_min_duration {
                        out.push(ProximityViolation {
                            badges: (a.to_string(), b.to_string()),
                            space_id: space.to_string(),
                            start: run.start,
                            end: run.end,
                            min_distance: run.min_dist,
                            location: run.mid,
                        });
                    }
                }
            }
        }
    }
    out.sort_by(|x, y| (&x.space_id, x.start, &x.badges).cmp(&(&y.space_id, y.start, &y.badges)));
    out
}

/// Anonymous events for a batch of violations.
pub fn proximity_events(violations: &[ProximityViolation]) -> Vec<AnomalyEvent> {
    violations
        .iter()
        .enumerate()
        .map(|(n, v)| v.to_event(format!("sd-{}-{}-{}", v.space_id, v.start, n)))
        .collect()
}

fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort();
    let mut merged: Vec<Interval> = Vec::new();
    for iv in intervals {
        match merged.last_mut() {
            Some(cur) if iv.start <= cur.end => cur.end = cur.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Contact trace for one infection report.
///
/// Spaces the infected badge visited inside `[reported_at - lookback,
/// reported_at]` are at risk from the start of each visit until
/// `linger_seconds` after it ended. Direct contacts spent at least
/// `trace_min_duration` seconds in total closer than the distance threshold
/// to the infected badge during the lookback; indirect contacts are everyone
/// else who visited an at-risk space while it was at risk.
pub fn trace(
    model: &TwinModel,
    report: &InfectionReport,
    visits: &[VisitInterval],
    pings: &[PositionPing],
    cfg: &TraceConfig,
) -> Result<TraceResult, TraceError> {
    if model.person(&report.badge_id).is_none() {
        return Err(TraceError::UnknownBadge(report.badge_id.clone()));
    }
    if report.lookback_seconds <= 0 {
        return Err(TraceError::InvalidLookback);
    }
    let infected = report.badge_id.as_str();
    let (from, to) = (report.reported_at - report.lookback_seconds, report.reported_at);

    let mut by_space: BTreeMap<&str, Vec<Interval>> = BTreeMap::new();
    for v in visits.iter().filter(|v| v.badge_id == infected && v.end >= from && v.start <= to) {
        let end = v.end.min(to);
        by_space
            .entry(&v.space_id)
            .or_default()
            .push(Interval { start: v.start.max(from), end: end + cfg.linger_seconds });
    }
    let at_risk: BTreeMap<&str, Vec<Interval>> =
        by_space.into_iter().map(|(s, ivs)| (s, merge_intervals(ivs))).collect();

    let mut exposure: BTreeMap<&str, i64> = BTreeMap::new();
    let in_window = pings.iter().filter(|p| p.timestamp >= from && p.timestamp <= to);
    for (_, badges) in tracks(in_window) {
        let Some(source) = badges.get(infected) else { continue };
        for (&other, track) in badges.iter().filter(|(&b, _)| b != infected) {
            let total: i64 = proximity_runs(&pair_samples(source, track), cfg).iter().map(|r| r.end - r.start).sum();
            *exposure.entry(other).or_default() += total;
        }
    }
    let direct: BTreeSet<&str> =
        exposure.into_iter().filter(|&(_, secs)| secs >= cfg.trace_min_duration).map(|(b, _)| b).collect();

    let indirect: BTreeSet<&str> = visits
        .iter()
        .filter(|v| v.badge_id != infected && !direct.contains(v.badge_id.as_str()))
        .filter(|v| {
            at_risk
                .get(v.space_id.as_str())
                .is_some_and(|ivs| ivs.iter().any(|iv| iv.overlaps(v.start, v.end)))
        })
        .map(|v| v.badge_id.as_str())
        .collect();

    Ok(TraceResult {
        report_id: report.report_id.clone(),
        badge_id: report.badge_id.clone(),
        reported_at: report.reported_at,
        at_risk_spaces: at_risk
            .into_iter()
            .map(|(s, intervals)| AtRiskSpace { space_id: s.to_string(), intervals })
            .collect(),
        direct_contacts: direct.into_iter().map(String::from).collect(),
        indirect_contacts: indirect.into_iter().map(String::from).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StoredPing {
    t: Timestamp,
    space: u32,
    at: Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LiveRun {
    start: Timestamp,
    last: Timestamp,
    min_dist: f64,
    mid: Point,
    raised: bool,
}

/// Streaming counterpart of [`detect_proximity_violations`]: each new ping
/// is compared with the latest ping of every other badge in the same space
/// (when within the pairing tolerance). A run is reported once, as soon as
/// it lasts long enough.
#[derive(Debug, Clone, Default, PartialEq)]
struct LiveProximity {
    latest: BTreeMap<u32, BTreeMap<String, (Timestamp, Point)>>,
    badge_space: HashMap<String, u32>,
    runs: BTreeMap<(String, String), LiveRun>,
}

impl LiveProximity {
    fn observe(&mut self, badge: &str, space: u32, t: Timestamp, at: Point, cfg: &TraceConfig) -> Vec<(String, String, LiveRun)> {
        if let Some(prev) = self.badge_space.insert(badge.to_string(), space) {
            if prev != space {
                if let Some(m) = self.latest.get_mut(&prev) {
                    m.remove(badge);
                }
                self.runs.retain(|(a, b), _| a != badge && b != badge);
            }
        }
        let mut raised = Vec::new();
        let peers = self.latest.entry(space).or_default();
        for (other, &(u, q)) in peers.iter() {
            if other == badge || (t - u).abs() > PAIRING_TOLERANCE_SECONDS {
                continue;
            }
            let key = if badge < other.as_str() {
                (badge.to_string(), other.clone())
            } else {
                (other.clone(), badge.to_string())
            };
            let dist = at.distance(&q);
            if dist >= cfg.distance_threshold {
                self.runs.remove(&key);
                continue;
            }
            let (lo, hi) = (t.min(u), t.max(u));
            let run = self
                .runs
                .entry(key.clone())
                .and_modify(|r| {
                    if lo - r.last > cfg.visit_gap_tolerance {
                        *r = LiveRun { start: lo, last: hi, min_dist: dist, mid: at.midpoint(&q), raised: false };
                    } else {
                        r.last = r.last.max(hi);
                        if dist < r.min_dist {
                            r.min_dist = dist;
                            r.mid = at.midpoint(&q);
                        }
                    }
                })
                .or_insert(LiveRun { start: lo, last: hi, min_dist: dist, mid: at.midpoint(&q), raised: false });
            if !run.raised && run.last - run.start >= cfg.live_min_duration {
                run.raised = true;
                raised.push((key.0, key.1, *run));
            }
        }
        peers.insert(badge.to_string(), (t, at));
        raised
    }
}

/// Live location state: every accepted ping, live proximity runs, and the
/// traces computed so far.
#[derive(Debug, Clone)]
pub struct ContactTracer {
    model: Arc<TwinModel>,
    config: TraceConfig,
    space_names: Vec<String>,
    space_index: HashMap<String, u32>,
    pings: BTreeMap<String, Vec<StoredPing>>,
    live: LiveProximity,
    traces: BTreeMap<String, TraceResult>,
    raised: u64,
}

impl ContactTracer {
    pub fn new(model: Arc<TwinModel>, config: TraceConfig) -> Self {
        ContactTracer {
            model,
            config,
            space_names: Vec::new(),
            space_index: HashMap::new(),
            pings: BTreeMap::new(),
            live: LiveProximity::default(),
            traces: BTreeMap::new(),
            raised: 0,
        }
    }

    pub fn config(&self) -> &TraceConfig {
        &self.config
    }

    pub fn set_model(&mut self, model: Arc<TwinModel>) {
        self.model = model;
    }

    pub fn validate_ping(&self, p: &PositionPing) -> Result<(), TraceError> {
        if self.model.person(&p.badge_id).is_none() {
            return Err(TraceError::UnknownBadge(p.badge_id.clone()));
        }
        let space = self.model.space(&p.space_id).filter(|s| s.kind == SpaceKind::Area);
        let geometry = space.and_then(|s| s.geometry).ok_or_else(|| TraceError::UnknownSpace(p.space_id.clone()))?;
        if !geometry.contains(&p.location) {
            return Err(TraceError::LocationOutOfBounds {
                badge: p.badge_id.clone(),
                space: p.space_id.clone(),
                timestamp: p.timestamp,
            });
        }
        Ok(())
    }

    fn intern(&mut self, space: &str) -> u32 {
        if let Some(&i) = self.space_index.get(space) {
            return i;
        }
        let i = self.space_names.len() as u32;
        self.space_names.push(space.to_string());
        self.space_index.insert(space.to_string(), i);
        i
    }

    /// Stores a batch of pings (all or nothing) and returns the live
    /// proximity violations they complete.
    pub fn record_pings(&mut self, pings: &[PositionPing]) -> Result<Vec<ProximityViolation>, TraceError> {
        for p in pings {
            self.validate_ping(p)?;
        }
        let cfg = self.config;
        let mut out = Vec::new();
        for p in pings {
            let space = self.intern(&p.space_id);
            let track = self.pings.entry(p.badge_id.clone()).or_default();
            let stored = StoredPing { t: p.timestamp, space, at: p.location };
            if track.last().is_none_or(|last| last.t <= p.timestamp) {
                track.push(stored);
            } else {
                let i = track.partition_point(|s| s.t <= p.timestamp);
                track.insert(i, stored);
            }
            for (a, b, run) in self.live.observe(&p.badge_id, space, p.timestamp, p.location, &cfg) {
                out.push(ProximityViolation {
                    badges: (a, b),
                    space_id: p.space_id.clone(),
                    start: run.start,
                    end: run.last,
                    min_distance: run.min_dist,
                    location: run.mid,
                });
            }
        }
        Ok(out)
    }

    /// Event for a live violation; ids stay unique across the run.
    pub fn proximity_event(&mut self, v: &ProximityViolation) -> AnomalyEvent {
        self.raised += 1;
        v.to_event(format!("sd-{}-{}-{}", v.space_id, v.start, self.raised))
    }

    pub fn ping_count(&self) -> usize {
        self.pings.values().map(Vec::len).sum()
    }

    /// Pings with timestamps in `[from, to]`, by badge then time.
    pub fn pings_between(&self, from: Timestamp, to: Timestamp) -> Vec<PositionPing> {
        let mut out = Vec::new();
        for (badge, track) in &self.pings {
            let i = track.partition_point(|s| s.t < from);
            for s in track[i..].iter().take_while(|s| s.t <= to) {
                out.push(PositionPing {
                    badge_id: badge.clone(),
                    space_id: self.space_names[s.space as usize].clone(),
                    location: s.at,
                    timestamp: s.t,
                });
            }
        }
        out
    }

    pub fn visits(&self) -> Vec<VisitInterval> {
        let mut out = Vec::new();
        for (badge, track) in &self.pings {
            let seq = track.iter().map(|s| (s.t, self.space_names[s.space as usize].as_str()));
            segment_sorted(badge, seq, &self.config, &mut out);
        }
        out
    }

    /// Traces a report against everything recorded so far and keeps the
    /// result.
    pub fn trace(&mut self, report: &InfectionReport) -> Result<TraceResult, TraceError> {
        if self.traces.contains_key(&report.report_id) {
            return Err(TraceError::DuplicateReport(report.report_id.clone()));
        }
        let pings = self.pings_between(report.reported_at - report.lookback_seconds.max(0), report.reported_at);
        let result = trace(&self.model, report, &self.visits(), &pings, &self.config)?;
        self.traces.insert(report.report_id.clone(), result.clone());
        Ok(result)
    }

    pub fn trace_result(&self, report_id: &str) -> Option<&TraceResult> {
        self.traces.get(report_id)
    }

    pub fn traces(&self) -> impl Iterator<Item = &TraceResult> {
        self.traces.values()
    }
}

/// One contact-tracing event per at-risk space.
pub fn contact_tracing_events(result: &TraceResult) -> Vec<AnomalyEvent> {
    result
        .at_risk_spaces
        .iter()
        .map(|s| AnomalyEvent {
            event_id: format!("ct-{}-{}", result.report_id, s.space_id),
            source_id: LOCATION_SOURCE.to_string(),
            vtype: ViolationType::ContactTracing,
            space_id: s.space_id.clone(),
            timestamp: result.reported_at,
            location: None,
            confidence: 1.0,
            payload: None,
        })
        .collect()
}
