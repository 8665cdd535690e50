use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::detectors::DetectorProfile;
use super::SimError;
use crate::geom::{Timestamp, SECONDS_PER_DAY};
use crate::twin::{load_model, TwinModel};

const PILOT_CONFIG: &str = include_str!("../../../../configs/pilot-jigani.json");
const PILOT_MODEL: &str = include_str!("../../../../configs/pilot-jigani.model.json");

/// How many instances are violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolationTarget {
    pub count: usize,
    /// Inclusive range the count must fall in.
    pub band: (usize, usize),
}

/// Scripted contact-tracing drills.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfectionPlanConfig {
    pub trials: usize,
    pub first_day: i64,
    pub spacing_days: i64,
    /// Second of day at which each drill begins.
    pub drill_start: i64,
    /// Time the infected badge spends in each of its two spaces.
    pub dwell_seconds: i64,
    pub direct_contacts: usize,
    pub contact_distance: f64,
    pub contact_seconds: i64,
    /// Share of the not-at-risk population that later passes through an
    /// at-risk space.
    pub indirect_fraction: f64,
    pub indirect_seconds: i64,
    pub bystander_seconds: i64,
    /// Spacing of the standing positions people are placed on.
    pub station_spacing: f64,
    pub report_delay: i64,
    pub sanitize_delay: i64,
}

impl Default for InfectionPlanConfig {
    fn default() -> Self {
        InfectionPlanConfig {
            trials: 7,
            first_day: 1,
            spacing_days: 3,
            drill_start: 16 * 3600,
            dwell_seconds: 1200,
            direct_contacts: 4,
            contact_distance: 1.5,
            contact_seconds: 120,
            indirect_fraction: 0.08,
            indirect_seconds: 300,
            bystander_seconds: 600,
            station_spacing: 3.0,
            report_delay: 3600,
            sanitize_delay: 1800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Model file, relative to the config file.
    pub model: String,
    /// First day of the horizon, in days since the epoch.
    pub start_day: i64,
    pub horizon_days: i64,
    #[serde(default = "default_interval")]
    pub opportunity_interval: i64,
    pub violations: ViolationTarget,
    #[serde(default)]
    pub infection_plan: Option<InfectionPlanConfig>,
    #[serde(default)]
    pub profile: DetectorProfile,
}

fn default_interval() -> i64 {
    3600
}

impl ScenarioConfig {
    pub fn start(&self) -> Timestamp {
        self.start_day * SECONDS_PER_DAY
    }

    pub fn end(&self) -> Timestamp {
        self.start() + self.horizon_days * SECONDS_PER_DAY
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.horizon_days <= 0 {
            return bad("horizon_days must be positive");
        }
        if self.opportunity_interval < 2 {
            return bad("opportunity_interval must be at least 2 seconds");
        }
        let (lo, hi) = self.violations.band;
        if lo > hi || !(lo..=hi).contains(&self.violations.count) {
            return bad("violation count lies outside its band");
        }
        self.profile.check()?;
        if let Some(plan) = &self.infection_plan {
            if plan.spacing_days < 1 || plan.dwell_seconds < 1 || plan.station_spacing <= 0.0 {
                return bad("infection plan timings must be positive");
            }
            if !(0.0..=1.0).contains(&plan.indirect_fraction) {
                return bad("indirect_fraction must lie in [0, 1]");
            }
            if plan.first_day + (plan.trials as i64).saturating_sub(1) * plan.spacing_days >= self.horizon_days {
                return bad("infection drills run past the horizon");
            }
        }
        Ok(())
    }
}

/// A scenario config with its model loaded.
#[derive(Debug, Clone)]
pub struct ScenarioSetup {
    pub config: ScenarioConfig,
    pub model: Arc<TwinModel>,
}

impl ScenarioSetup {
    pub fn new(config: ScenarioConfig, model: Arc<TwinModel>) -> Result<Self, SimError> {
        config.check()?;
        Ok(ScenarioSetup { config, model })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| SimError::Io { path: p.to_path_buf(), message: e.to_string() });
        let config: ScenarioConfig =
            serde_json::from_slice(&read(path)?).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let model_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&config.model);
        let model = load_model(&read(&model_path)?)?;
        ScenarioSetup::new(config, Arc::new(model))
    }

    /// The reference pilot: 16 areas, 180 staff, 21 days.
    pub fn pilot_jigani() -> Self {
        let config: ScenarioConfig = serde_json::from_str(PILOT_CONFIG).expect("bundled pilot config parses");
        let model = load_model(PILOT_MODEL.as_bytes()).expect("bundled pilot model is valid");
        ScenarioSetup::new(config, Arc::new(model)).expect("bundled pilot config is valid")
    }
}
