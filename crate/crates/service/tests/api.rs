mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{handwash, start, write_config, KEY, T0};
use sopwatch_service::{router, AppState, ClockMode, LoadedConfig, Shared, StartupError};

async fn call(state: &Shared, method: &str, uri: &str, key: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(k) = key {
        req = req.header("x-api-key", k);
    }
    let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
    let resp = router(state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(state: &Shared, uri: &str) -> (StatusCode, Value) {
    call(state, "GET", uri, None, Value::Null).await
}

#[tokio::test]
async fn health_reports_model_and_config_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    let (status, body) = get(&state, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_id"], "pilot-jigani");
    assert_eq!(body["areas"], 16);
    assert_eq!(body["people"], 180);
    assert_eq!(body["clock_mode"], "simulated");
    assert!(body["clock"].is_null());
    for key in ["config", "model", "credentials"] {
        let h = body["config_hashes"][key].as_str().unwrap();
        assert_eq!(h.len(), 64, "{key} hash {h}");
    }
}

#[test]
fn missing_credentials_file_is_named_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let path = write_config(dir.path(), json!({ "credentials": missing }));
    match LoadedConfig::load(&path) {
        Err(StartupError::Read { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected a read error, got {other:?}"),
    }
    let msg = LoadedConfig::load(&path).unwrap_err().to_string();
    assert!(msg.contains("nope.json"), "{msg}");
}

#[test]
fn unknown_config_keys_and_bad_overlays_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), json!({ "listen_addr": "0.0.0.0:1" }));
    assert!(matches!(LoadedConfig::load(&path), Err(StartupError::Invalid { .. })));

    let overlay = dir.path().join("bad-overlay.json");
    std::fs::write(&overlay, r#"{"remove_space_ids": ["no-such-space"]}"#).unwrap();
    let path = write_config(dir.path(), json!({ "overlays": [overlay] }));
    match LoadedConfig::load(&path) {
        Err(StartupError::Invalid { path, .. }) => assert_eq!(path, overlay),
        other => panic!("expected an invalid overlay, got {other:?}"),
    }
}

#[test]
fn shipped_config_and_overlay_load() {
    let loaded = LoadedConfig::load(&common::configs_dir().join("service.json")).unwrap();
    assert_eq!(loaded.model.area_count(), 16);

    let dir = tempfile::tempdir().unwrap();
    let overlay = common::configs_dir().join("overlays/small-format-north.json");
    let path = write_config(dir.path(), json!({ "overlays": [overlay] }));
    let loaded = LoadedConfig::load(&path).unwrap();
    assert_eq!(loaded.model.area_count(), 15);
    assert_eq!(loaded.hashes.overlays.len(), 1);
    assert!(loaded.model.space("utility-room").is_none());
}

#[tokio::test]
async fn events_are_accepted_deduplicated_and_rejected_by_reason() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);

    let (status, body) = call(&state, "POST", "/events", Some(KEY), handwash("e1", T0)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "accepted_new");
    let vid = body["violation_id"].as_str().unwrap().to_string();
    assert_eq!(body["reported_at"], T0, "handwash publishes immediately");

    // same bytes again, and a near-identical event from the same camera
    let (status, body) = call(&state, "POST", "/events", Some(KEY), handwash("e1", T0)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "accepted_duplicate");
    assert_eq!(body["duplicate_of"], vid.as_str());
    let (status, body) = call(&state, "POST", "/events", Some(KEY), handwash("e2", T0 + 5)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["duplicate_of"], vid.as_str());

    let (status, body) = call(&state, "POST", "/events", None, handwash("e3", T0)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("auth_failed")));
    let (status, body) = call(&state, "POST", "/events", Some("wrong"), handwash("e3", T0)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("auth_failed")));

    let (status, body) = call(&state, "POST", "/events", Some(KEY), json!("not an event")).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("malformed")));

    let mut bad = handwash("e4", T0);
    bad["confidence"] = json!(1.5);
    let (status, body) = call(&state, "POST", "/events", Some(KEY), bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["details"]["field_errors"][0]["code"], "confidence_out_of_range");

    let mut bad = handwash("e5", T0);
    bad["space_id"] = json!("moon-base");
    let (status, body) = call(&state, "POST", "/events", Some(KEY), bad).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_space")));

    let mut spoofed = handwash("e6", T0);
    spoofed["source_id"] = json!("ble-gateway");
    let (status, _) = call(&state, "POST", "/events", Some(KEY), spoofed).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, list) = get(&state, "/violations?since=0").await;
    let items = list["violations"].as_array().unwrap();
    assert_eq!(items.len(), 1);
    assert_eq!(items[0]["seq"], 0);
    assert_eq!(items[0]["violation"]["duplicate_event_ids"], json!(["e1", "e2"]));
    assert_eq!(list["next"], 1);
    let (_, later) = get(&state, "/violations?since=1").await;
    assert_eq!(later["violations"], json!([]));
    assert_eq!(later["next"], 1);

    let (_, snap) = get(&state, "/snapshot").await;
    assert_eq!(snap["total_published"], 1);
    let space = snap["spaces"].as_array().unwrap().iter().find(|s| s["space_id"] == "vegetable-receiving").unwrap();
    assert_eq!(space["rag"]["active_count"], 1);

    // an hour later the window is empty again
    let (_, later) = get(&state, &format!("/snapshot?at={}", T0 + 3600)).await;
    assert_eq!(later["as_of"], T0 + 3600);
    let space = later["spaces"].as_array().unwrap().iter().find(|s| s["space_id"] == "vegetable-receiving").unwrap();
    assert_eq!(space["rag"]["level"], "green");
}

#[tokio::test]
async fn delay_tolerant_violations_wait_for_the_batch_tick() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    let mut ev = handwash("m1", T0);
    ev["vtype"] = json!("face_mask");
    let (status, body) = call(&state, "POST", "/events", Some(KEY), ev).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["reported_at"].is_null());
    assert_eq!(get(&state, "/violations").await.1["violations"], json!([]));

    let (status, body) = call(&state, "POST", "/clock", None, json!({ "to": T0 + 900 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["clock"], T0 + 900);
    let (_, list) = get(&state, "/violations").await;
    assert_eq!(list["violations"][0]["violation"]["reported_at"], T0 + 900);
}

#[tokio::test]
async fn clock_cannot_be_moved_under_the_system_clock() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::System);
    let (status, body) = call(&state, "POST", "/clock", None, json!({ "to": T0 })).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("system_clock")));
}

fn ping(badge: &str, space: &str, x: f64, t: i64) -> Value {
    json!({ "badge_id": badge, "space_id": space, "location": { "x": x, "y": 5.0 }, "timestamp": t })
}

#[tokio::test]
async fn pings_infections_sanitizing_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    let batch = |t: i64| json!([ping("b001", "vegetable-receiving", 4.0, t), ping("b002", "vegetable-receiving", 4.5, t)]);

    let (status, _) = call(&state, "POST", "/pings", None, batch(T0)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = call(&state, "POST", "/pings", Some("ble-gateway-key"), json!([{ "badge_id": "b001" }])).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("malformed")));
    let (status, body) =
        call(&state, "POST", "/pings", Some("ble-gateway-key"), json!([ping("b001", "vegetable-receiving", 99.0, T0)]))
            .await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("location_out_of_bounds")));

    // two badges half a metre apart for two minutes
    let mut raised = 0;
    for t in (T0..=T0 + 120).step_by(2) {
        let (status, body) = call(&state, "POST", "/pings", Some("ble-gateway-key"), batch(t)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["accepted"], 2);
        raised += body["raised"].as_array().unwrap().len();
    }
    assert!(raised >= 1, "close contact raised no social-distancing event");

    let report = json!({ "report_id": "r1", "badge_id": "b001", "reported_at": T0 + 3600 });
    let (status, trace) = call(&state, "POST", "/infections", None, report.clone()).await;
    assert_eq!(status, StatusCode::OK, "{trace}");
    assert_eq!(trace["direct_contacts"], json!(["b002"]));
    assert_eq!(trace["at_risk_spaces"][0]["space_id"], "vegetable-receiving");

    let (status, body) = call(&state, "POST", "/infections", None, report).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_report")));
    let (status, _) =
        call(&state, "POST", "/infections", None, json!({ "report_id": "r2", "badge_id": "zzz", "reported_at": T0 }))
            .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    assert_eq!(get(&state, "/trace/r1").await.1, trace);
    assert_eq!(get(&state, "/trace/r9").await.0, StatusCode::NOT_FOUND);

    let at_risk = |snap: &Value| -> Vec<String> {
        let spaces = snap["spaces"].as_array().unwrap();
        spaces.iter().filter(|s| s["at_risk"] == true).map(|s| s["space_id"].as_str().unwrap().to_string()).collect()
    };
    assert_eq!(at_risk(&get(&state, "/snapshot").await.1), ["vegetable-receiving"]);
    let (status, body) = call(&state, "POST", "/spaces/vegetable-receiving/sanitized", None, Value::Null).await;
    assert_eq!((status, body["was_at_risk"].as_bool()), (StatusCode::OK, Some(true)));
    let (_, body) = call(&state, "POST", "/spaces/vegetable-receiving/sanitized", None, Value::Null).await;
    assert_eq!(body["was_at_risk"], false);
    assert!(at_risk(&get(&state, "/snapshot").await.1).is_empty());
    let (status, _) = call(&state, "POST", "/spaces/nowhere/sanitized", None, Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reassigning_a_person() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    let (status, _) = call(&state, "POST", "/people/b001/reassign", None, json!({ "space_id": "cold-storage" })).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&state, "POST", "/people/b001/reassign", None, json!({ "space_id": "production" })).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("not_an_area")));
    let (status, _) = call(&state, "POST", "/people/nobody/reassign", None, json!({ "space_id": "cold-storage" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&state, "POST", "/people/b001/reassign", None, json!({ "space": "cold-storage" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn alert_stream_replays_backlog_then_follows() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    call(&state, "POST", "/events", Some(KEY), handwash("a1", T0)).await;

    let req = Request::builder().uri("/alerts?since=0").body(Body::empty()).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let mut next_frame = async || {
        let frame = body.frame().await.unwrap().unwrap();
        String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap()
    };
    let first = next_frame().await;
    assert!(first.contains("event: violation") && first.contains("id: 0"), "{first}");
    // the data line is the bare violation record
    let data = first.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let record: Value = serde_json::from_str(data).unwrap();
    assert_eq!(record["canonical"]["event_id"], "a1");

    let mut ev = handwash("a2", T0 + 600);
    ev["space_id"] = json!("cold-storage");
    ev["location"] = json!({ "x": 1.0, "y": 1.0 });
    let (status, body) = call(&state, "POST", "/events", Some(KEY), ev).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let second = tokio::time::timeout(std::time::Duration::from_secs(5), next_frame()).await.unwrap();
    assert!(second.contains("id: 1") && second.contains("cold-storage"), "{second}");
}

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    call(&state, "POST", "/events", Some(KEY), handwash("r1", T0)).await;
    call(&state, "POST", "/people/b001/reassign", None, json!({ "space_id": "cold-storage" })).await;
    let before = get(&state, "/snapshot").await.1;
    state.flush();
    drop(state);

    let state = start(dir.path(), ClockMode::Simulated);
    let health = get(&state, "/healthz").await.1;
    assert_eq!(health["recovered_records"], 2);
    assert_eq!(health["clock"], T0);
    assert_eq!(get(&state, "/snapshot").await.1, before);
    // the event id is remembered across the restart
    let (status, _) = call(&state, "POST", "/events", Some(KEY), handwash("r1", T0)).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn corrupt_journal_refuses_to_start_and_torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    let rt = tokio::runtime::Runtime::new().unwrap();
    for i in 0..3 {
        let ev = handwash(&format!("c{i}"), T0 + i * 60);
        rt.block_on(call(&state, "POST", "/events", Some(KEY), ev));
    }
    drop(state);
    let journal = dir.path().join("log/journal.ndjson");
    let good = std::fs::read(&journal).unwrap();
    let lines: Vec<&[u8]> = good.split_inclusive(|&b| b == b'\n').collect();
    assert_eq!(lines.len(), 3);

    // a torn final write
    let mut torn = good.clone();
    torn.extend_from_slice(&lines[2][..lines[2].len() / 2]);
    std::fs::write(&journal, &torn).unwrap();
    let state = start(dir.path(), ClockMode::Simulated);
    assert_eq!(state.info.recovered_records, 3);
    drop(state);
    assert_eq!(std::fs::read(&journal).unwrap(), good);

    // damage in the middle is not something to guess about
    let mut bad = Vec::new();
    bad.extend_from_slice(lines[0]);
    bad.extend_from_slice(b"{\"seq\": garbage}\n");
    bad.extend_from_slice(lines[2]);
    std::fs::write(&journal, &bad).unwrap();
    let path = write_config(dir.path(), json!({}));
    match AppState::start(LoadedConfig::load(&path).unwrap(), ClockMode::Simulated) {
        Err(StartupError::CorruptLog { line, .. }) => assert_eq!(line, 2),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("started on a corrupt journal"),
    }
}
