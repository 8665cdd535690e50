//! Synthetic factory days: ground truth, imperfect detectors, and scoring
//! of what the system reports against what actually happened.

mod config;
mod detectors;
mod metrics;
mod run;
mod scenario;


use std::path::PathBuf;

use thiserror::Error;

use crate::system::SystemError;
use crate::twin::ModelError;

pub use config::{InfectionPlanConfig, ScenarioConfig, ScenarioSetup, ViolationTarget};
pub use detectors::{
    sample, simulate_detectors, ConfidenceRange, DetectorOutput, DetectorProfile, DetectorSpec, Sampling, SentEvent,
    PING_INTERVAL_SECONDS, SIM_SOURCE,
};
pub use metrics::{
    activity_completion, compute_metrics, greedy_match, hygiene_metrics, score_detections, tracing_metrics,
    CategoryMetrics, Confusion, Detection, MatchingParams, MetricsReport,
};
pub use run::{
    apply_feed_item, build_feed, drain, order_feed, run_end_to_end, sim_credentials, EndToEndReport, FeedItem, IngestCounts,
    SIM_API_KEY, SIM_RATE_LIMIT,
};
pub use scenario::{
    build_scenario, checked_types, stations, GroundTruthInstance, InfectionTrial, MovementSegment, Scenario,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("nominal duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error(transparent)]
    System(#[from] SystemError),
}
