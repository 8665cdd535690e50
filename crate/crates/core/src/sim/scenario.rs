use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use super::config::{InfectionPlanConfig, ScenarioSetup};
use super::SimError;
use crate::geom::{Geometry, Point, Timestamp, SECONDS_PER_DAY};
use crate::twin::{SpaceNode, TwinModel, ViolationType};

/// One compliance check. `compliant = false` marks a violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthInstance {
    pub instance_id: String,
    pub vtype: ViolationType,
    pub space_id: String,
    pub time: Timestamp,
    /// Where it happened; absent for space-level checks.
    pub location: Option<Point>,
    pub compliant: bool,
}

/// A badge's stay in one space, walking straight lines between waypoints
/// at constant pace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovementSegment {
    pub space_id: String,
    pub enter: Timestamp,
    pub exit: Timestamp,
    pub waypoints: Vec<Point>,
}

impl MovementSegment {
    pub fn position_at(&self, t: Timestamp) -> Point {
        let n = self.waypoints.len();
        if n == 1 || self.exit <= self.enter {
            return self.waypoints[0];
        }
        let f = (t - self.enter) as f64 / (self.exit - self.enter) as f64 * (n - 1) as f64;
        let i = (f.floor() as usize).min(n - 2);
        let r = f - i as f64;
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        Point::new(a.x + (b.x - a.x) * r, a.y + (b.y - a.y) * r)
    }
}

/// A scripted infection drill and what tracing ought to find.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfectionTrial {
    pub report_id: String,
    pub badge_id: String,
    pub reported_at: Timestamp,
    /// People who were really exposed (in close contact).
    pub true_at_risk: Vec<String>,
    /// Spaces the infected badge occupied.
    pub true_spaces: Vec<String>,
    pub sanitize_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    #[serde(serialize_with = "model_document")]
    pub model: Arc<TwinModel>,
    pub start: Timestamp,
    pub end: Timestamp,
    pub opportunities: Vec<GroundTruthInstance>,
    pub movement_scripts: BTreeMap<String, Vec<MovementSegment>>,
    pub infection_plan: Vec<InfectionTrial>,
    pub seed: u64,
}

fn model_document<S: Serializer>(model: &Arc<TwinModel>, s: S) -> Result<S::Ok, S::Error> {
    model.document().serialize(s)
}

impl Scenario {
    pub fn positives(&self) -> usize {
        self.opportunities.iter().filter(|o| !o.compliant).count()
    }
}

/// Hygiene checks run in each slot.
pub fn checked_types(staffed: bool) -> Vec<ViolationType> {
    ViolationType::ALL
        .into_iter()
        .filter(|v| v.is_hygiene() && (staffed || !v.is_person_level()))
        .collect()
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Union of an area's process windows, as `[start, end)` seconds of day.
fn operating_windows(model: &TwinModel, space_id: &str) -> Vec<(i64, i64)> {
    let mut w: Vec<(i64, i64)> =
        model.processes_in(space_id).flat_map(|p| p.windows.iter().map(|w| (w.start as i64, w.end as i64))).collect();
    w.sort();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (s, e) in w {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

fn random_point(rng: &mut ChaCha8Rng, g: &Geometry) -> Point {
    let margin = 0.5_f64.min(g.width / 4.0).min(g.height / 4.0);
    Point::new(rng.random_range(margin..=g.width - margin), rng.random_range(margin..=g.height - margin))
}

/// Standing positions on a square grid, one meter in from the walls.
pub fn stations(g: &Geometry, spacing: f64) -> Vec<Point> {
    let axis = |len: f64| {
        let mut v = Vec::new();
        let mut x = 1.0;
        while x <= len - 1.0 {
            v.push(x);
            x += spacing;
        }
        v
    };
    let xs = axis(g.width);
    axis(g.height).into_iter().flat_map(|y| xs.iter().map(move |&x| Point::new(x, y))).collect()
}

/// Builds a scenario. Output depends only on the setup and the seed.
pub fn build_scenario(setup: &ScenarioSetup, seed: u64) -> Result<Scenario, SimError> {
    let cfg = &setup.config;
    let model = &setup.model;
    let staffed: BTreeSet<&str> = model.people().iter().map(|p| p.home_space.as_str()).collect();

    let mut slot_rng = rng(seed, 1);
    let interval = cfg.opportunity_interval;
    let mut raw = Vec::new();
    for day in 0..cfg.horizon_days {
        let day_start = cfg.start() + day * SECONDS_PER_DAY;
        for area in model.areas() {
            let geometry = area.geometry.expect("areas have geometry");
            let types = checked_types(staffed.contains(area.space_id.as_str()));
            for (ws, we) in operating_windows(model, &area.space_id) {
                let mut slot = day_start + ws;
                while slot + interval <= day_start + we {
                    for &vtype in &types {
                        let time = slot + slot_rng.random_range(0..interval / 2);
                        let location = vtype.is_person_level().then(|| random_point(&mut slot_rng, &geometry));
                        raw.push((time, area.space_id.clone(), vtype, location));
                    }
                    slot += interval;
                }
            }
        }
    }
    raw.sort_by(|a, b| (a.0, &a.1, a.2).cmp(&(b.0, &b.1, b.2)));

    let target = cfg.violations.count;
    if target > raw.len() {
        return Err(SimError::Config(format!("{target} violations requested but only {} opportunities", raw.len())));
    }
    let violating: BTreeSet<usize> = index::sample(&mut rng(seed, 2), raw.len(), target).into_iter().collect();
    let opportunities = raw
        .into_iter()
        .enumerate()
        .map(|(i, (time, space_id, vtype, location))| GroundTruthInstance {
            instance_id: format!("gt-{:06}", i + 1),
            vtype,
            space_id,
            time,
            location,
            compliant: !violating.contains(&i),
        })
        .collect();

    let mut movement_scripts: BTreeMap<String, Vec<MovementSegment>> = BTreeMap::new();
    let mut infection_plan = Vec::new();
    if let (Some(plan), false) = (&cfg.infection_plan, model.people().is_empty()) {
        let mut plan_rng = rng(seed, 3);
        for trial in 0..plan.trials {
            let day_start = cfg.start() + (plan.first_day + trial as i64 * plan.spacing_days) * SECONDS_PER_DAY;
            let drill = plan_drill(model, plan, day_start + plan.drill_start, trial, &mut plan_rng)?;
            for (badge, seg) in drill.segments {
                movement_scripts.entry(badge).or_default().push(seg);
            }
            infection_plan.push(drill.trial);
        }
        for segs in movement_scripts.values_mut() {
            segs.sort_by_key(|s| s.enter);
        }
    }

    Ok(Scenario {
        name: cfg.name.clone(),
        model: model.clone(),
        start: cfg.start(),
        end: cfg.end(),
        opportunities,
        movement_scripts,
        infection_plan,
        seed,
    })
}

struct Drill {
    trial: InfectionTrial,
    segments: Vec<(String, MovementSegment)>,
}

fn stay(space: &SpaceNode, enter: Timestamp, exit: Timestamp, at: Point, wander: f64) -> MovementSegment {
    let g = space.geometry.expect("areas have geometry");
    let mut waypoints = vec![at];
    if wander > 0.0 {
        waypoints.push(g.clamp(Point::new(at.x + wander, at.y + wander)));
        waypoints.push(at);
    }
    MovementSegment { space_id: space.space_id.clone(), enter, exit, waypoints }
}

/// One drill: the infected badge spends a dwell in space A and then in
/// space B, with a few people standing close by for a while. After it
/// leaves each space, indirect visitors come through; everyone else stands
/// on a grid elsewhere.
fn plan_drill(
    model: &TwinModel,
    plan: &InfectionPlanConfig,
    start: Timestamp,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Drill, SimError> {
    let people: Vec<&str> = model.people().iter().map(|p| p.badge_id.as_str()).collect();
    let population = people.len() - 1;
    if population < plan.direct_contacts {
        return Err(SimError::Config("not enough people for the direct contacts".into()));
    }
    let negatives = population - plan.direct_contacts;
    let indirect = (plan.indirect_fraction * negatives as f64).round() as usize;
    let per_space = indirect.div_ceil(2);

    let areas: Vec<&SpaceNode> = model.areas().collect();
    let candidates: Vec<&SpaceNode> = areas
        .iter()
        .copied()
        .filter(|a| stations(&a.geometry.expect("areas have geometry"), plan.station_spacing).len() >= per_space.max(1))
        .collect();
    if candidates.len() < 2 {
        return Err(SimError::Config("no two areas can hold the drill".into()));
    }
    let picked = index::sample(rng, candidates.len(), 2);
    let (a, b) = (candidates[picked.index(0)], candidates[picked.index(1)]);

    let mut shuffled = people.clone();
    shuffled.shuffle(rng);
    let infected = shuffled.remove(0).to_string();
    let direct: Vec<&str> = shuffled.drain(..plan.direct_contacts).collect();
    let visitors: Vec<&str> = shuffled.drain(..indirect).collect();
    let bystanders = shuffled;

    let dwell = plan.dwell_seconds;
    let t_a = (start, start + dwell);
    let t_b = (t_a.1 + 2, t_a.1 + 2 + dwell);
    let mut segments = Vec::new();
    let centre = |s: &SpaceNode| {
        let g = s.geometry.expect("areas have geometry");
        Point::new(g.width / 2.0, g.height / 2.0)
    };
    segments.push((infected.clone(), stay(a, t_a.0, t_a.1, centre(a), 0.0)));
    segments.push((infected.clone(), stay(b, t_b.0, t_b.1, centre(b), 0.0)));

    // close contacts, alternating between the two spaces, spread around the
    // infected badge
    let lead = (dwell - plan.contact_seconds).clamp(0, 300);
    let in_a = direct.len().div_ceil(2);
    let in_b = direct.len() - in_a;
    for (j, badge) in direct.iter().enumerate() {
        let (space, window, k, n) = if j % 2 == 0 { (a, t_a, j / 2, in_a) } else { (b, t_b, j / 2, in_b) };
        let angle = std::f64::consts::TAU * k as f64 / n as f64;
        let c = centre(space);
        let at = Point::new(c.x + plan.contact_distance * angle.cos(), c.y + plan.contact_distance * angle.sin());
        let enter = window.0 + lead;
        segments.push((badge.to_string(), stay(space, enter, enter + plan.contact_seconds, at, 0.0)));
    }

    // indirect visitors: after the infected badge has left
    for (space, left, group) in [(a, t_a.1, &visitors[..per_space.min(visitors.len())]), (b, t_b.1, &visitors[per_space.min(visitors.len())..])] {
        let spots = stations(&space.geometry.expect("areas have geometry"), plan.station_spacing);
        let enter = left + 300;
        for (badge, &at) in group.iter().zip(&spots) {
            segments.push((badge.to_string(), stay(space, enter, enter + plan.indirect_seconds, at, 0.6)));
        }
    }

    // bystanders: home area if possible, never A or B; extra waves if the
    // floor is full
    let elsewhere: Vec<&SpaceNode> =
        areas.iter().copied().filter(|s| s.space_id != a.space_id && s.space_id != b.space_id).collect();
    let capacity: BTreeMap<&str, Vec<Point>> = elsewhere
        .iter()
        .map(|s| (s.space_id.as_str(), stations(&s.geometry.expect("areas have geometry"), plan.station_spacing)))
        .collect();
    if capacity.values().all(Vec::is_empty) {
        return Err(SimError::Config("no standing room outside the drill spaces".into()));
    }
    let mut used: BTreeMap<&str, usize> = BTreeMap::new();
    let mut wave = 0;
    let mut last_exit = t_b.1 + 300 + plan.indirect_seconds;
    for badge in bystanders {
        let home = model.person(badge).map(|p| p.home_space.as_str()).unwrap_or_default();
        let free = |sid: &str, used: &BTreeMap<&str, usize>| capacity.get(sid).is_some_and(|v| used.get(sid).copied().unwrap_or(0) < v.len());
        let target = if free(home, &used) {
            Some(home)
        } else {
            elsewhere.iter().map(|s| s.space_id.as_str()).find(|sid| free(sid, &used))
        };
        let sid = match target {
            Some(sid) => sid,
            None => {
                wave += 1;
                used.clear();
                if free(home, &used) {
                    home
                } else {
                    elsewhere.iter().map(|s| s.space_id.as_str()).find(|sid| free(sid, &used)).expect("some area has room")
                }
            }
        };
        let slot = used.entry(sid).or_insert(0);
        let at = capacity[sid][*slot];
        *slot += 1;
        let space = model.space(sid).expect("listed areas exist");
        let enter = start + wave * (plan.bystander_seconds + 100);
        last_exit = last_exit.max(enter + plan.bystander_seconds);
        segments.push((badge.to_string(), stay(space, enter, enter + plan.bystander_seconds, at, 0.6)));
    }

    let reported_at = last_exit + plan.report_delay;
    let mut true_at_risk: Vec<String> = direct.iter().map(|s| s.to_string()).collect();
    true_at_risk.sort();
    let mut true_spaces = vec![a.space_id.clone(), b.space_id.clone()];
    true_spaces.sort();
    Ok(Drill {
        trial: InfectionTrial {
            report_id: format!("drill-{}", trial + 1),
            badge_id: infected,
            reported_at,
            true_at_risk,
            true_spaces,
            sanitize_at: reported_at + plan.sanitize_delay,
        },
        segments,
    })
}
