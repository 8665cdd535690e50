use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sopwatch_core::contact::{InfectionReport, DEFAULT_LOOKBACK_SECONDS};
use sopwatch_core::sim::{build_scenario, run_end_to_end, simulate_detectors, ScenarioSetup, SIM_API_KEY};
use sopwatch_core::system::SystemConfig;
use sopwatch_core::twin::{derive_model, load_model, ModelError, ModelOverlay, TwinModel};
use sopwatch_core::Timestamp;
use sopwatch_service::recording::{read_feed, write_recording};
use sopwatch_service::replay::{replay, ReplayOptions};
use sopwatch_service::{report, serve_on, shutdown_signal, AppState, ClockMode, LoadedConfig, StartupError};

#[derive(Debug, Parser)]
#[command(name = "sopwatch", version, about = "SOP compliance monitoring and contact tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "configs/service.json")]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ClockMode::System)]
        clock: ClockMode,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Check a model document and report every problem found.
    ValidateModel { path: PathBuf },
    /// Apply overlays, in order, to a template model.
    DeriveModel {
        template: PathBuf,
        #[arg(required = true)]
        overlays: Vec<PathBuf>,
        /// Where to write the derived model; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario end to end in-process and print its metrics.
    Simulate {
        /// Scenario config; the bundled pilot when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Directory for the event, ping and drill streams and the metrics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-feed recorded streams to a running service.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        pings: Option<PathBuf>,
        #[arg(long)]
        drills: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_URL)]
        url: String,
        #[arg(long, default_value = SIM_API_KEY)]
        api_key: String,
        /// Stop after this many feed items.
        #[arg(long)]
        limit: Option<usize>,
        /// Leave queued violations unpublished at the end.
        #[arg(long)]
        no_drain: bool,
    },
    /// Print a metrics table from a saved report.
    Report { path: PathBuf },
    /// File an infection report with a running service and print the trace.
    Trace {
        #[arg(long)]
        badge: String,
        /// When the infection was reported (unix seconds).
        #[arg(long)]
        at: Timestamp,
        #[arg(long, default_value_t = DEFAULT_LOOKBACK_SECONDS)]
        lookback: i64,
        /// Defaults to `<badge>-<at>`.
        #[arg(long)]
        report_id: Option<String>,
        #[arg(long, default_value = DEFAULT_URL)]
        url: String,
    },
}

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

type Fallible = Result<(), String>;

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Fallible {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            // a closed pipe (`| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn model_from(path: &Path) -> Result<TwinModel, String> {
    load_model(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn setup_from(path: Option<&Path>) -> Result<ScenarioSetup, String> {
    match path {
        Some(p) => ScenarioSetup::load(p).map_err(|e| e.to_string()),
        None => Ok(ScenarioSetup::pilot_jigani()),
    }
}

fn serve(config: &Path, clock: ClockMode, listen: Option<String>) -> Fallible {
    let loaded = LoadedConfig::load(config).map_err(|e| e.to_string())?;
    let addr = listen.unwrap_or_else(|| loaded.config.listen.clone());
    let state = AppState::start(loaded, clock).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| StartupError::Bind { addr: addr.clone(), message: e.to_string() }.to_string())?;
        tracing::info!(%addr, model = %state.info.model_id, clock = ?clock, "listening");
        serve_on(listener, state, shutdown_signal()).await.map_err(|e| e.to_string())
    })
}

fn validate_model(path: &Path) -> Fallible {
    match load_model(&read(path)?) {
        Ok(m) => {
            println!("valid: {} ({} areas, {} people)", m.model_id(), m.area_count(), m.people().len());
            Ok(())
        }
        Err(ModelError::Validation(report)) => {
            for issue in &report.issues {
                println!("{issue}");
            }
            Err(format!("{}: {} problem(s)", path.display(), report.issues.len()))
        }
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

fn derive(template: &Path, overlays: &[PathBuf], out: Option<&Path>) -> Fallible {
    let mut model = model_from(template)?;
    for p in overlays {
        let overlay: ModelOverlay = serde_json::from_slice(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
        model = derive_model(&model, &overlay).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let text = serde_json::to_string_pretty(model.document()).expect("documents serialize");
    write_or_print(out, &text)
}

fn simulate(config: Option<&Path>, seed: u64, out: Option<&Path>) -> Fallible {
    let setup = setup_from(config)?;
    let scenario = build_scenario(&setup, seed).map_err(|e| e.to_string())?;
    let profile = &setup.config.profile;
    let run = run_end_to_end(&scenario, profile, &SystemConfig::default(), seed).map_err(|e| e.to_string())?;
    print!("{}", report::render(&run.metrics));
    if let Some(dir) = out {
        let output = simulate_detectors(&scenario, profile, seed).map_err(|e| e.to_string())?;
        write_recording(dir, &scenario, &output, &run).map_err(|e| e.to_string())?;
    }
    Ok(())
}

struct ReplayArgs {
    events: PathBuf,
    pings: Option<PathBuf>,
    drills: Option<PathBuf>,
    opts: ReplayOptions,
}

fn run_replay(args: ReplayArgs) -> Fallible {
    let feed = read_feed(&args.events, args.pings.as_deref(), args.drills.as_deref()).map_err(|e| e.to_string())?;
    let end = feed.last().map_or(0, |i| i.at());
    let summary = replay(&feed, end, &args.opts).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summaries serialize"));
    Ok(())
}

fn show_report(path: &Path) -> Fallible {
    let metrics = report::parse_metrics(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    print!("{}", report::render(&metrics));
    Ok(())
}

fn remote_trace(url: &str, report: &InfectionReport) -> Fallible {
    let endpoint = format!("{}/infections", url.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let body = serde_json::to_vec(report).expect("reports serialize");
    let mut resp = agent
        .post(&endpoint)
        .content_type("application/json")
        .send(&body[..])
        .map_err(|e| format!("{endpoint}: {e}"))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| format!("{endpoint}: {e}"))?;
    if status != 200 {
        return Err(format!("{endpoint} answered {status}: {text}"));
    }
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{endpoint}: {e}"))?;
    println!("{}", serde_json::to_string_pretty(&value).expect("json serializes"));
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, clock, listen } => serve(&config, clock, listen),
        Command::ValidateModel { path } => validate_model(&path),
        Command::DeriveModel { template, overlays, out } => derive(&template, &overlays, out.as_deref()),
        Command::Simulate { config, seed, out } => simulate(config.as_deref(), seed, out.as_deref()),
        Command::Replay { events, pings, drills, url, api_key, limit, no_drain } => run_replay(ReplayArgs {
            events,
            pings,
            drills,
            opts: ReplayOptions { base_url: url, api_key, limit, drain: !no_drain },
        }),
        Command::Report { path } => show_report(&path),
        Command::Trace { badge, at, lookback, report_id, url } => {
            let report_id = report_id.unwrap_or_else(|| format!("{badge}-{at}"));
            remote_trace(&url, &InfectionReport { report_id, badge_id: badge, reported_at: at, lookback_seconds: lookback })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
