#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use sopwatch_service::{AppState, ClockMode, LoadedConfig, Shared};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Writes a service config into `dir` that points at the shipped pilot
/// model and credentials, with the journal under `dir/log`.
pub fn write_config(dir: &Path, extra: Value) -> PathBuf {
    let configs = configs_dir();
    let mut cfg = json!({
        "model": configs.join("pilot-jigani.model.json"),
        "credentials": configs.join("credentials.json"),
        "log_dir": "log",
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("service.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn start(dir: &Path, mode: ClockMode) -> Shared {
    let path = write_config(dir, json!({}));
    AppState::start(LoadedConfig::load(&path).unwrap(), mode).unwrap()
}

/// 15:00 on the first pilot day; vegetable receiving runs 14:00-20:00.
pub const T0: i64 = 18_628 * 86_400 + 15 * 3600;

pub const KEY: &str = "vision-sim-key";

pub fn handwash(id: &str, t: i64) -> Value {
    json!({
        "event_id": id,
        "source_id": "vision-sim",
        "vtype": "handwash",
        "space_id": "vegetable-receiving",
        "timestamp": t,
        "location": { "x": 3.0, "y": 4.0 },
        "confidence": 0.93,
    })
}
