//! Scoring published violations and traces against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scenario::{GroundTruthInstance, InfectionTrial, Scenario};
use super::SimError;
use crate::contact::TraceResult;
use crate::geom::Timestamp;
use crate::pipeline::ViolationRecord;
use crate::twin::ViolationType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingParams {
    pub time_tolerance: i64,
    pub same_space: bool,
    pub same_vtype: bool,
}

impl Default for MatchingParams {
    fn default() -> Self {
        MatchingParams { time_tolerance: 30, same_space: true, same_vtype: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn specificity(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }
}

/// Counts plus the derived rates; a rate is `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    #[serde(flatten)]
    pub counts: Confusion,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl From<Confusion> for CategoryMetrics {
    fn from(counts: Confusion) -> Self {
        CategoryMetrics { counts, sensitivity: counts.sensitivity(), specificity: counts.specificity() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hygiene: CategoryMetrics,
    /// Person-level: was each person correctly flagged at risk?
    pub tracing: CategoryMetrics,
    /// Space-level: was each area correctly flagged?
    pub tracing_spaces: CategoryMetrics,
    pub matching: MatchingParams,
    pub opportunities: usize,
    pub positives: usize,
    pub records_scored: usize,
}

/// The fields of a detection that matching looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: String,
    pub vtype: ViolationType,
    pub space_id: String,
    pub time: Timestamp,
}

impl From<&ViolationRecord> for Detection {
    fn from(r: &ViolationRecord) -> Self {
        Detection {
            id: r.violation_id.clone(),
            vtype: r.canonical.vtype,
            space_id: r.canonical.space_id.clone(),
            time: r.canonical.timestamp,
        }
    }
}

fn compatible(d: &Detection, g: &GroundTruthInstance, p: &MatchingParams) -> bool {
    (!p.same_space || d.space_id == g.space_id)
        && (!p.same_vtype || d.vtype == g.vtype)
        && (d.time - g.time).abs() <= p.time_tolerance
}

/// One-to-one matching of detections to instances, closest in time first.
/// Ties break on instance id, then detection id, so the result does not
/// depend on input order. Returns `(detection index, instance index)`.
pub fn greedy_match(
    detections: &[Detection],
    instances: &[&GroundTruthInstance],
    params: &MatchingParams,
) -> Vec<(usize, usize)> {
    let mut by_time: Vec<usize> = (0..instances.len()).collect();
    by_time.sort_by_key(|&i| instances[i].time);
    let mut pairs = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        let lo = by_time.partition_point(|&i| instances[i].time < d.time - params.time_tolerance);
        for &ii in &by_time[lo..] {
            let g = instances[ii];
            if g.time > d.time + params.time_tolerance {
                break;
            }
            if compatible(d, g, params) {
                pairs.push(((d.time - g.time).abs(), ii, di));
            }
        }
    }
    pairs.sort_by(|a, b| {
        (a.0, &instances[a.1].instance_id, &detections[a.2].id).cmp(&(b.0, &instances[b.1].instance_id, &detections[b.2].id))
    });
    let (mut used_d, mut used_i) = (vec![false; detections.len()], vec![false; instances.len()]);
    let mut out = Vec::new();
    for (_, ii, di) in pairs {
        if !used_d[di] && !used_i[ii] {
            used_d[di] = true;
            used_i[ii] = true;
            out.push((di, ii));
        }
    }
    out.sort();
    out
}

/// Confusion counts for detections against instances. Detections are
/// matched to violations first; leftovers are then matched to compliant
/// instances, each such match costing that instance its true negative.
/// Every detection not matched to a violation is a false positive.
pub fn score_detections(instances: &[GroundTruthInstance], detections: &[Detection], params: &MatchingParams) -> Confusion {
    let positives: Vec<&GroundTruthInstance> = instances.iter().filter(|g| !g.compliant).collect();
    let negatives: Vec<&GroundTruthInstance> = instances.iter().filter(|g| g.compliant).collect();
    let hits = greedy_match(detections, &positives, params);
    let matched: BTreeSet<usize> = hits.iter().map(|&(d, _)| d).collect();
    let rest: Vec<Detection> =
        detections.iter().enumerate().filter(|(i, _)| !matched.contains(i)).map(|(_, d)| d.clone()).collect();
    let false_hits = greedy_match(&rest, &negatives, params);
    Confusion {
        tp: hits.len(),
        fn_: positives.len() - hits.len(),
        tn: negatives.len() - false_hits.len(),
        fp: rest.len(),
    }
}

/// Hygiene confusion counts from published hygiene violations.
pub fn hygiene_metrics(instances: &[GroundTruthInstance], records: &[ViolationRecord], params: &MatchingParams) -> Confusion {
    let detections: Vec<Detection> =
        records.iter().filter(|r| r.reported_at.is_some() && r.canonical.vtype.is_hygiene()).map(Detection::from).collect();
    score_detections(instances, &detections, params)
}

/// Person-level tracing counts. For each drill the population is everyone
/// but the infected person; a drill with no trace counts every true
/// contact as missed.
pub fn tracing_metrics(
    trials: &[InfectionTrial],
    traces: &[TraceResult],
    people: &[String],
    areas: &[String],
) -> (Confusion, Confusion) {
    let by_id: BTreeMap<&str, &TraceResult> = traces.iter().map(|t| (t.report_id.as_str(), t)).collect();
    let (mut persons, mut spaces) = (Confusion::default(), Confusion::default());
    for trial in trials {
        let trace = by_id.get(trial.report_id.as_str());
        let flagged: BTreeSet<String> = trace.map(|t| t.at_risk_people().into_iter().map(str::to_string).collect()).unwrap_or_default();
        let truth: BTreeSet<&String> = trial.true_at_risk.iter().collect();
        for p in people.iter().filter(|p| **p != trial.badge_id) {
            tally(&mut persons, truth.contains(p), flagged.contains(p));
        }
        let flagged_spaces: BTreeSet<String> = trace.map(|t| t.space_ids().map(str::to_string).collect()).unwrap_or_default();
        for a in areas {
            tally(&mut spaces, trial.true_spaces.contains(a), flagged_spaces.contains(a));
        }
    }
    (persons, spaces)
}

fn tally(c: &mut Confusion, truth: bool, flagged: bool) {
    match (truth, flagged) {
        (true, true) => c.tp += 1,
        (true, false) => c.fn_ += 1,
        (false, false) => c.tn += 1,
        (false, true) => c.fp += 1,
    }
}

pub fn compute_metrics(
    scenario: &Scenario,
    records: &[ViolationRecord],
    traces: &[TraceResult],
    params: &MatchingParams,
) -> MetricsReport {
    let people: Vec<String> = scenario.model.people().iter().map(|p| p.badge_id.clone()).collect();
    let areas: Vec<String> = scenario.model.areas().map(|a| a.space_id.clone()).collect();
    let (tracing, tracing_spaces) = tracing_metrics(&scenario.infection_plan, traces, &people, &areas);
    MetricsReport {
        hygiene: hygiene_metrics(&scenario.opportunities, records, params).into(),
        tracing: tracing.into(),
        tracing_spaces: tracing_spaces.into(),
        matching: *params,
        opportunities: scenario.opportunities.len(),
        positives: scenario.positives(),
        records_scored: records.iter().filter(|r| r.reported_at.is_some() && r.canonical.vtype.is_hygiene()).count(),
    }
}

/// Percent of nominal duration completed, capped to `[0, 100]`.
pub fn activity_completion(elapsed: f64, nominal: f64) -> Result<f64, SimError> {
    if nominal.is_nan() || nominal <= 0.0 {
        return Err(SimError::InvalidDuration(nominal));
    }
    Ok((100.0 * elapsed / nominal).clamp(0.0, 100.0))
}
