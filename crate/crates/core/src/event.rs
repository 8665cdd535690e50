//! The standardized anomaly event shared by every detector source.
//!
//! Events never identify a person: there is no badge, name or image field,
//! and unknown top-level fields are rejected at parse time.

use serde::{Deserialize, Serialize};

use crate::geom::{Point, Timestamp};
use crate::twin::ViolationType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyEvent {
    pub event_id: String,
    pub source_id: String,
    pub vtype: ViolationType,
    pub space_id: String,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Point>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

/// Wire form of an event before validation: every field optional so that
/// missing fields can be reported by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEvent {
    pub event_id: Option<String>,
    pub source_id: Option<String>,
    pub vtype: Option<String>,
    pub space_id: Option<String>,
    pub timestamp: Option<Timestamp>,
    pub location: Option<Point>,
    pub confidence: Option<f64>,
    pub payload: Option<serde_json::Value>,
}

impl From<&AnomalyEvent> for RawEvent {
    fn from(e: &AnomalyEvent) -> Self {
        RawEvent {
            event_id: Some(e.event_id.clone()),
            source_id: Some(e.source_id.clone()),
            vtype: Some(e.vtype.as_str().to_string()),
            space_id: Some(e.space_id.clone()),
            timestamp: Some(e.timestamp),
            location: e.location,
            confidence: Some(e.confidence),
            payload: e.payload.clone(),
        }
    }
}

/// Payload keys that would tie an event to an individual.
pub const IDENTITY_KEYS: &[&str] = &[
    "badge", "badge_id", "person", "person_id", "name", "phone", "email", "photo", "image", "face", "employee_id",
];

/// Finds the first identity-bearing key anywhere inside a payload.
pub fn find_identity_key(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::Object(map) => map.iter().find_map(|(k, v)| {
            if IDENTITY_KEYS.contains(&k.to_ascii_lowercase().as_str()) {
                Some(k.clone())
            } else {
                find_identity_key(v)
            }
        }),
        serde_json::Value::Array(items) => items.iter().find_map(find_identity_key),
        _ => None,
    }
}
