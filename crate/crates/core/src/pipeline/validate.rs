use serde::{Deserialize, Serialize};

use crate::event::{find_identity_key, AnomalyEvent, RawEvent};
use crate::geom::Timestamp;
use crate::twin::{SpaceKind, TwinModel, ViolationType};

/// How far into the future an event timestamp may be.
pub const CLOCK_SKEW_SECONDS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub code: String,
}

impl FieldError {
    fn new(field: &str, code: impl Into<String>) -> Self {
        FieldError { field: field.to_string(), code: code.into() }
    }
}

fn required<'a>(value: &'a Option<String>, field: &str, errors: &mut Vec<FieldError>) -> Option<&'a str> {
    match value.as_deref() {
        Some(v) if !v.is_empty() => Some(v),
        _ => {
            errors.push(FieldError::new(field, format!("missing_field:{field}")));
            None
        }
    }
}

/// Schema, reference and range checks. Returns the typed event, or every
/// field error found in field order.
pub fn validate_event(raw: &RawEvent, model: &TwinModel, now: Timestamp) -> Result<AnomalyEvent, Vec<FieldError>> {
    let mut errors = Vec::new();

    let event_id = required(&raw.event_id, "event_id", &mut errors);
    let source_id = required(&raw.source_id, "source_id", &mut errors);

    let vtype = required(&raw.vtype, "vtype", &mut errors).and_then(|v| match v.parse::<ViolationType>() {
        Ok(t) => Some(t),
        Err(()) => {
            errors.push(FieldError::new("vtype", "unknown_vtype"));
            None
        }
    });

    let space_id = required(&raw.space_id, "space_id", &mut errors);
    let space = space_id.and_then(|id| match model.space(id) {
        None => {
            errors.push(FieldError::new("space_id", "unknown_space"));
            None
        }
        Some(s) if s.kind != SpaceKind::Area => {
            errors.push(FieldError::new("space_id", "space_not_area"));
            None
        }
        Some(s) => Some(s),
    });

    match raw.timestamp {
        None => errors.push(FieldError::new("timestamp", "missing_field:timestamp")),
        Some(t) if t > now + CLOCK_SKEW_SECONDS => errors.push(FieldError::new("timestamp", "timestamp_in_future")),
        Some(_) => {}
    }

    if let (Some(loc), Some(space)) = (&raw.location, space) {
        let inside = space.geometry.is_some_and(|g| g.contains(loc));
        if !inside {
            errors.push(FieldError::new("location", "location_out_of_bounds"));
        }
    }

    match raw.confidence {
        None => errors.push(FieldError::new("confidence", "missing_field:confidence")),
        Some(c) if !(0.0..=1.0).contains(&c) => errors.push(FieldError::new("confidence", "confidence_out_of_range")),
        Some(_) => {}
    }

    if let Some(key) = raw.payload.as_ref().and_then(find_identity_key) {
        errors.push(FieldError::new("payload", format!("identity_field:{key}")));
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(AnomalyEvent {
        event_id: event_id.expect("checked").to_string(),
        source_id: source_id.expect("checked").to_string(),
        vtype: vtype.expect("checked"),
        space_id: space_id.expect("checked").to_string(),
        timestamp: raw.timestamp.expect("checked"),
        location: raw.location,
        confidence: raw.confidence.expect("checked"),
        payload: raw.payload.clone(),
    })
}
