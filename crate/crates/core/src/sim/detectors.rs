//! Simulated camera detectors and location badges.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::SimError;
use crate::contact::PositionPing;
use crate::event::AnomalyEvent;
use crate::geom::{Point, Timestamp};
use crate::twin::ViolationType;

pub const SIM_SOURCE: &str = "vision-sim";
pub const PING_INTERVAL_SECONDS: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceRange {
    pub mean: f64,
    /// Half-width of the uniform spread around the mean.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub sensitivity: f64,
    pub specificity: f64,
    pub location_noise_sigma: f64,
    pub confidence: ConfidenceRange,
}

impl DetectorSpec {
    pub const PERFECT: DetectorSpec = DetectorSpec {
        sensitivity: 1.0,
        specificity: 1.0,
        location_noise_sigma: 0.0,
        confidence: ConfidenceRange { mean: 0.9, spread: 0.0 },
    };
}

/// How detections are drawn.
///
/// `Systematic` fixes the realized count to within one of its expectation
/// while leaving each instance with its nominal probability; `Bernoulli`
/// draws each instance independently.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Systematic,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorProfile {
    pub default: DetectorSpec,
    /// Per-type overrides.
    pub types: BTreeMap<ViolationType, DetectorSpec>,
    pub sampling: Sampling,
    /// Mean number of extra detections of the same violation.
    pub repeat_mean: f64,
    /// Chance that a source sends the same event twice.
    pub resend_probability: f64,
    pub ping_noise_sigma: f64,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        DetectorProfile::uniform(DetectorSpec::PERFECT)
    }
}

impl DetectorProfile {
    pub fn uniform(spec: DetectorSpec) -> Self {
        DetectorProfile {
            default: spec,
            types: BTreeMap::new(),
            sampling: Sampling::Systematic,
            repeat_mean: 0.0,
            resend_probability: 0.0,
            ping_noise_sigma: 0.0,
        }
    }

    pub fn spec(&self, vtype: ViolationType) -> &DetectorSpec {
        self.types.get(&vtype).unwrap_or(&self.default)
    }

    pub fn check(&self) -> Result<(), SimError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        // false for NaN
        let non_negative = |x: f64| x >= 0.0;
        for spec in std::iter::once(&self.default).chain(self.types.values()) {
            let c = spec.confidence;
            if !unit(spec.sensitivity) || !unit(spec.specificity) {
                return Err(SimError::Config("sensitivity and specificity must lie in [0, 1]".into()));
            }
            if !non_negative(spec.location_noise_sigma) || !non_negative(c.spread) || c.mean - c.spread < 0.0 || c.mean + c.spread > 1.0 {
                return Err(SimError::Config("detector noise or confidence out of range".into()));
            }
        }
        if !non_negative(self.repeat_mean) || !unit(self.resend_probability) || !non_negative(self.ping_noise_sigma) {
            return Err(SimError::Config("repeat, resend or ping noise settings out of range".into()));
        }
        Ok(())
    }
}

/// An event as a source would deliver it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentEvent {
    pub received_at: Timestamp,
    pub event: AnomalyEvent,
    /// Ground-truth instance the detection came from.
    pub instance_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectorOutput {
    /// Ordered by arrival.
    pub events: Vec<SentEvent>,
    /// Ordered by time, then badge.
    pub pings: Vec<PositionPing>,
}

/// Picks each index with probability `probs[i]`.
pub fn sample(probs: &[f64], sampling: Sampling, rng: &mut ChaCha8Rng) -> Vec<bool> {
    match sampling {
        Sampling::Bernoulli => probs.iter().map(|&p| rng.random_bool(p.clamp(0.0, 1.0))).collect(),
        Sampling::Systematic => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.shuffle(rng);
            let mut cum: f64 = rng.random();
            let mut picked = vec![false; probs.len()];
            for i in order {
                let before = cum.floor();
                cum += probs[i].clamp(0.0, 1.0);
                picked[i] = cum.floor() > before;
            }
            picked
        }
    }
}

fn noisy(rng: &mut ChaCha8Rng, p: Point, sigma: f64) -> Point {
    if sigma <= 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sigma).expect("sigma is positive");
    Point::new(p.x + n.sample(rng), p.y + n.sample(rng))
}

/// Runs the detectors over a scenario.
pub fn simulate_detectors(scenario: &Scenario, profile: &DetectorProfile, seed: u64) -> Result<DetectorOutput, SimError> {
    profile.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(10);
    let model = &scenario.model;

    // detection probability per instance, split by ground truth
    let probs: Vec<f64> = scenario
        .opportunities
        .iter()
        .map(|o| {
            let spec = profile.spec(o.vtype);
            if o.compliant { 1.0 - spec.specificity } else { spec.sensitivity }
        })
        .collect();
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..probs.len()).partition(|&i| !scenario.opportunities[i].compliant);
    let mut detected = vec![false; probs.len()];
    for group in [pos, neg] {
        let p: Vec<f64> = group.iter().map(|&i| probs[i]).collect();
        for (k, hit) in sample(&p, profile.sampling, &mut rng).into_iter().enumerate() {
            detected[group[k]] = hit;
        }
    }

    let mut events = Vec::new();
    let repeats = (profile.repeat_mean > 0.0).then(|| Poisson::new(profile.repeat_mean).expect("positive mean"));
    for (o, _) in scenario.opportunities.iter().zip(&detected).filter(|(_, &d)| d) {
        let spec = profile.spec(o.vtype);
        let geometry = model.geometry(&o.space_id).expect("instances lie in areas");
        let timestamp = o.time + rng.random_range(0..=5);
        let location = o.location.map(|p| geometry.clamp(noisy(&mut rng, p, spec.location_noise_sigma)));
        let c = spec.confidence;
        let confidence = if c.spread > 0.0 { rng.random_range(c.mean - c.spread..=c.mean + c.spread) } else { c.mean };
        let base = AnomalyEvent {
            event_id: format!("cam-{}", o.instance_id),
            source_id: SIM_SOURCE.to_string(),
            vtype: o.vtype,
            space_id: o.space_id.clone(),
            timestamp,
            location,
            confidence,
            payload: None,
        };
        let mut emitted = vec![base.clone()];
        let extra = repeats.map_or(0, |d| d.sample(&mut rng) as usize);
        for k in 1..=extra {
            let mut e = base.clone();
            e.event_id = format!("cam-{}-r{k}", o.instance_id);
            e.timestamp = timestamp + rng.random_range(2..=20);
            e.location = location.map(|p| geometry.clamp(noisy(&mut rng, p, 0.1)));
            emitted.push(e);
        }
        for event in emitted {
            let received_at = event.timestamp + rng.random_range(0..=10);
            if rng.random_bool(profile.resend_probability) {
                let again = received_at + rng.random_range(1..=30);
                events.push(SentEvent { received_at: again, event: event.clone(), instance_id: o.instance_id.clone() });
            }
            events.push(SentEvent { received_at, event, instance_id: o.instance_id.clone() });
        }
    }
    events.sort_by(|a, b| (a.received_at, &a.event.event_id).cmp(&(b.received_at, &b.event.event_id)));

    let mut pings = Vec::new();
    for (badge, segments) in &scenario.movement_scripts {
        for seg in segments {
            let geometry = model.geometry(&seg.space_id).expect("scripts stay in areas");
            let mut t = seg.enter;
            while t <= seg.exit {
                let location = geometry.clamp(noisy(&mut rng, seg.position_at(t), profile.ping_noise_sigma));
                pings.push(PositionPing { badge_id: badge.clone(), space_id: seg.space_id.clone(), location, timestamp: t });
                t += PING_INTERVAL_SECONDS;
            }
        }
    }
    pings.sort_by(|a, b| (a.timestamp, &a.badge_id).cmp(&(b.timestamp, &b.badge_id)));
    Ok(DetectorOutput { events, pings })
}
