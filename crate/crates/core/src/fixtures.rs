//! Small models shared by unit tests.

use std::sync::Arc;

use crate::event::AnomalyEvent;
use crate::geom::{Point, Timestamp};
use crate::pipeline::{CredentialStore, SourceCredential};
use crate::twin::{ModelDocument, TwinModel, ViolationType};

/// Day 18628 (2021-01-01) at 00:00 UTC.
pub const DAY0: Timestamp = 18_628 * 86_400;

pub fn doc() -> ModelDocument {
    serde_json::from_value(serde_json::json!({
        "model_id": "fixture",
        "format_kind": "small_format",
        "meal_plan": "south",
        "spaces": [
            {"space_id": "factory", "name": "Factory", "kind": "factory"},
            {"space_id": "production", "name": "Production", "kind": "zone", "parent": "factory"},
            {"space_id": "cooking", "name": "Cooking", "kind": "area", "parent": "production",
             "geometry": {"width": 10.0, "height": 8.0}},
            {"space_id": "packing", "name": "Packing", "kind": "area", "parent": "production",
             "geometry": {"width": 10.0, "height": 8.0}},
            {"space_id": "stores", "name": "Stores", "kind": "area", "parent": "factory",
             "geometry": {"width": 6.0, "height": 6.0}}
        ],
        "people": [
            {"badge_id": "b001", "role": "cook", "home_space": "cooking"},
            {"badge_id": "b002", "role": "cook", "home_space": "cooking"},
            {"badge_id": "b003", "role": "packer", "home_space": "packing"},
            {"badge_id": "b004", "role": "packer", "home_space": "packing"},
            {"badge_id": "b005", "role": "storekeeper", "home_space": "stores"}
        ],
        "processes": [
            {"process_id": "p-cooking", "name": "Cooking", "space": "cooking",
             "windows": [{"start": 18000, "end": 46800}], "nominal_activity_duration": 1800.0},
            {"process_id": "p-packing", "name": "Packing", "space": "packing",
             "windows": [{"start": 28800, "end": 43200}], "nominal_activity_duration": 1200.0}
        ]
    }))
    .expect("fixture model parses")
}

pub fn model() -> Arc<TwinModel> {
    Arc::new(TwinModel::from_document(doc()).expect("fixture model is valid"))
}

pub fn credentials() -> CredentialStore {
    CredentialStore::new(vec![
        SourceCredential { source_id: "cam".into(), api_key: "key-cam".into(), rate_limit: 1000 },
        SourceCredential { source_id: "slow".into(), api_key: "key-slow".into(), rate_limit: 2 },
    ])
    .expect("fixture credentials are valid")
}

pub fn event(id: &str, vtype: ViolationType, space: &str, t: Timestamp) -> AnomalyEvent {
    AnomalyEvent {
        event_id: id.into(),
        source_id: "cam".into(),
        vtype,
        space_id: space.into(),
        timestamp: t,
        location: Some(Point::new(2.0, 2.0)),
        confidence: 0.9,
        payload: None,
    }
}
