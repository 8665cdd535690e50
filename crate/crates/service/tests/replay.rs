mod common;

use std::path::Path;

use serde_json::Value;
use tokio::sync::oneshot;

use sopwatch_core::sim::{build_feed, build_scenario, run_end_to_end, simulate_detectors, FeedItem, Scenario, ScenarioSetup};
use sopwatch_core::system::SystemConfig;
use sopwatch_service::recording::{read_feed, write_recording, DRILLS_FILE, EVENTS_FILE, PINGS_FILE};
use sopwatch_service::replay::{replay, ReplayOptions, ReplaySummary};
use sopwatch_service::{serve_on, ClockMode};

const SEED: u64 = 77;

fn short_pilot() -> (ScenarioSetup, Scenario) {
    let mut setup = ScenarioSetup::pilot_jigani();
    setup.config.horizon_days = 3;
    setup.config.violations.count = 20;
    setup.config.violations.band = (0, 150);
    if let Some(plan) = setup.config.infection_plan.as_mut() {
        plan.trials = 1;
    }
    let setup = ScenarioSetup::new(setup.config, setup.model).unwrap();
    let scenario = build_scenario(&setup, SEED).unwrap();
    (setup, scenario)
}

struct Running {
    url: String,
    stop: oneshot::Sender<()>,
    done: tokio::task::JoinHandle<std::io::Result<()>>,
}

async fn launch(dir: &Path) -> Running {
    let state = common::start(dir, ClockMode::Simulated);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel();
    let done = tokio::spawn(serve_on(listener, state, async {
        let _ = rx.await;
    }));
    Running { url, stop, done }
}

impl Running {
    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        self.done.await.unwrap().unwrap();
    }

    async fn get(&self, path: &str) -> Value {
        let url = format!("{}{path}", self.url);
        tokio::task::spawn_blocking(move || {
            let body = ureq::get(&url).call().unwrap().body_mut().read_to_string().unwrap();
            serde_json::from_str(&body).unwrap()
        })
        .await
        .unwrap()
    }

    async fn replay(&self, feed: &[FeedItem], end: i64, limit: Option<usize>) -> ReplaySummary {
        let opts = ReplayOptions { base_url: self.url.clone(), api_key: common::KEY.to_string(), limit, drain: true };
        let feed = feed.to_vec();
        tokio::task::spawn_blocking(move || replay(&feed, end, &opts).unwrap()).await.unwrap()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn interrupted_replay_resumes_to_the_same_state() {
    let (setup, scenario) = short_pilot();
    let output = simulate_detectors(&scenario, &setup.config.profile, SEED).unwrap();
    let feed = build_feed(&scenario, &output);
    let end = scenario.end;

    // reference: the same feed, in-process
    let reference = run_end_to_end(&scenario, &setup.config.profile, &SystemConfig::default(), SEED).unwrap();

    // uninterrupted over HTTP
    let whole_dir = tempfile::tempdir().unwrap();
    let whole = launch(whole_dir.path()).await;
    let summary = whole.replay(&feed, end, None).await;
    assert!(summary.complete);
    assert_eq!(summary.skipped, 0);
    let whole_snapshot = whole.get("/snapshot").await;
    let whole_violations = whole.get("/violations?limit=100000").await;
    whole.shutdown().await;

    assert_eq!(whole_snapshot, serde_json::to_value(&reference.snapshot).unwrap());
    assert_eq!(summary.events_accepted, reference.ingest.accepted);
    assert_eq!(summary.events_duplicate, reference.ingest.duplicates);

    // stopped part-way, restarted on the same journal, resumed
    let dir = tempfile::tempdir().unwrap();
    let first = launch(dir.path()).await;
    let cut = first.replay(&feed, end, Some(summary.sent / 2)).await;
    assert!(!cut.complete);
    first.shutdown().await;

    let second = launch(dir.path()).await;
    let health = second.get("/healthz").await;
    assert!(health["recovered_records"].as_u64().unwrap() > 0);
    let resumed = second.replay(&feed, end, None).await;
    assert!(resumed.complete);
    assert!(resumed.skipped > 0, "nothing was skipped on resume");
    assert_eq!(second.get("/snapshot").await, whole_snapshot);
    assert_eq!(second.get("/violations?limit=100000").await, whole_violations);
    second.shutdown().await;

    // running the whole feed again changes nothing
    let third = launch(dir.path()).await;
    let again = third.replay(&feed, end, None).await;
    assert_eq!(again.events_accepted, 0);
    assert_eq!(third.get("/snapshot").await, whole_snapshot);
    third.shutdown().await;
}

#[test]
fn recorded_streams_rebuild_the_same_feed() {
    let (setup, scenario) = short_pilot();
    let output = simulate_detectors(&scenario, &setup.config.profile, SEED).unwrap();
    let run = run_end_to_end(&scenario, &setup.config.profile, &SystemConfig::default(), SEED).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_recording(dir.path(), &scenario, &output, &run).unwrap();

    let p = |name: &str| dir.path().join(name);
    let feed = read_feed(&p(EVENTS_FILE), Some(&p(PINGS_FILE)), Some(&p(DRILLS_FILE))).unwrap();
    assert_eq!(feed, build_feed(&scenario, &output));

    let events_only = read_feed(&p(EVENTS_FILE), None, None).unwrap();
    assert_eq!(events_only.len(), output.events.len());
    assert!(events_only.iter().all(|i| matches!(i, FeedItem::Event { .. })));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn trace_command_files_a_report_with_a_running_service() {
    let dir = tempfile::tempdir().unwrap();
    let server = launch(dir.path()).await;
    let pings: Vec<Value> = (0..=60)
        .flat_map(|k| {
            let t = common::T0 + 2 * k;
            [("b001", 4.0), ("b002", 4.5)].map(|(b, x)| {
                serde_json::json!({ "badge_id": b, "space_id": "vegetable-receiving", "location": { "x": x, "y": 5.0 }, "timestamp": t })
            })
        })
        .collect();
    let url = server.url.clone();
    let at = common::T0 + 3600;
    let out = tokio::task::spawn_blocking(move || {
        let body = serde_json::to_vec(&pings).unwrap();
        ureq::post(&format!("{url}/pings")).header("x-api-key", "ble-gateway-key").content_type("application/json").send(&body[..]).unwrap();
        let run = |id: &str| {
            std::process::Command::new(env!("CARGO_BIN_EXE_sopwatch"))
                .args(["trace", "--badge", "b001", "--at", &at.to_string(), "--report-id", id, "--url", &url])
                .output()
                .unwrap()
        };
        (run("cli-1"), run("cli-1"))
    })
    .await
    .unwrap();
    let (first, again) = out;
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let trace: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(trace["report_id"], "cli-1");
    assert_eq!(trace["direct_contacts"], serde_json::json!(["b002"]));
    assert_eq!(again.status.code(), Some(1), "a duplicate report is a domain error");
    assert_eq!(server.get("/trace/cli-1").await, trace);
    server.shutdown().await;
}
