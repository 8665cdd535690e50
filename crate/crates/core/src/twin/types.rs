use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{Geometry, SECONDS_PER_DAY};

/// Closed set of monitored SOP violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationType {
    FaceMask,
    Hairnet,
    Gloves,
    Apron,
    Mopping,
    Handwash,
    Sterilization,
    SocialDistancing,
    ContactTracing,
}

impl ViolationType {
    pub const ALL: [ViolationType; 9] = [
        ViolationType::FaceMask,
        ViolationType::Hairnet,
        ViolationType::Gloves,
        ViolationType::Apron,
        ViolationType::Mopping,
        ViolationType::Handwash,
        ViolationType::Sterilization,
        ViolationType::SocialDistancing,
        ViolationType::ContactTracing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationType::FaceMask => "face_mask",
            ViolationType::Hairnet => "hairnet",
            ViolationType::Gloves => "gloves",
            ViolationType::Apron => "apron",
            ViolationType::Mopping => "mopping",
            ViolationType::Handwash => "handwash",
            ViolationType::Sterilization => "sterilization",
            ViolationType::SocialDistancing => "social_distancing",
            ViolationType::ContactTracing => "contact_tracing",
        }
    }

    /// Default reporting priority when no space overrides it.
    ///
    /// Gloves and apron have no row of their own in the SOP priority table;
    /// they follow the other attire rows.
    pub fn default_priority(self) -> Priority {
        match self {
            ViolationType::Handwash | ViolationType::ContactTracing => Priority::Immediate,
            _ => Priority::DelayTolerant,
        }
    }

    /// Violations committed by a person (as opposed to a space-level lapse
    /// such as an unmopped floor).
    pub fn is_person_level(self) -> bool {
        matches!(
            self,
            ViolationType::FaceMask
                | ViolationType::Hairnet
                | ViolationType::Gloves
                | ViolationType::Apron
                | ViolationType::Handwash
                | ViolationType::SocialDistancing
        )
    }

    /// Attire and cleaning checks, scored together as hygiene-and-safety.
    pub fn is_hygiene(self) -> bool {
        !matches!(self, ViolationType::SocialDistancing | ViolationType::ContactTracing)
    }
}

impl fmt::Display for ViolationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViolationType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViolationType::ALL.into_iter().find(|v| v.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Immediate,
    DelayTolerant,
}

pub const DEFAULT_AMBER_MIN: u32 = 1;
pub const DEFAULT_RED_MIN: u32 = 4;

fn default_amber() -> u32 {
    DEFAULT_AMBER_MIN
}
fn default_red() -> u32 {
    DEFAULT_RED_MIN
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub priority: Priority,
    #[serde(default = "default_amber")]
    pub rag_amber_min: u32,
    #[serde(default = "default_red")]
    pub rag_red_min: u32,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl PolicyEntry {
    pub fn default_for(vtype: ViolationType) -> Self {
        PolicyEntry {
            priority: vtype.default_priority(),
            rag_amber_min: DEFAULT_AMBER_MIN,
            rag_red_min: DEFAULT_RED_MIN,
            enabled: true,
        }
    }
}

/// Per-space policy overrides; types absent from the map inherit.
pub type SopPolicySet = BTreeMap<ViolationType, PolicyEntry>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Factory,
    Zone,
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceNode {
    pub space_id: String,
    pub name: String,
    pub kind: SpaceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub policy: SopPolicySet,
}

/// A staff member, known only by a pseudonymous badge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Person {
    pub badge_id: String,
    pub role: String,
    pub home_space: String,
}

/// Daily window `[start, end)` in seconds of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start: u32,
    pub end: u32,
}

impl TimeWindow {
    pub fn contains(&self, second_of_day: u32) -> bool {
        self.start <= second_of_day && second_of_day < self.end
    }

    pub fn is_well_formed(&self) -> bool {
        self.start < self.end && self.end <= SECONDS_PER_DAY as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDef {
    pub process_id: String,
    pub name: String,
    pub space: String,
    pub windows: Vec<TimeWindow>,
    pub nominal_activity_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatKind {
    Centralized,
    SmallFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MealPlan {
    North,
    South,
}

/// The on-disk shape of a twin model. Not necessarily valid; see
/// [`crate::twin::validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub model_id: String,
    pub format_kind: FormatKind,
    pub meal_plan: MealPlan,
    pub spaces: Vec<SpaceNode>,
    #[serde(default)]
    pub people: Vec<Person>,
    #[serde(default)]
    pub processes: Vec<ProcessDef>,
}
