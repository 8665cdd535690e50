//! Service configuration and everything it points at, loaded and checked
//! up front so the service fails fast on startup rather than mid-run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sopwatch_core::contact::TraceConfig;
use sopwatch_core::pipeline::{BatchSchedule, CredentialStore, DedupConfig, SourceCredential};
use sopwatch_core::status::StatusConfig;
use sopwatch_core::system::SystemConfig;
use sopwatch_core::twin::{derive_model, load_model, ModelOverlay, TwinModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Paths are relative to the config file.
    pub model: PathBuf,
    #[serde(default)]
    pub overlays: Vec<PathBuf>,
    pub credentials: PathBuf,
    #[serde(default)]
    pub dedup: DedupConfig,
    #[serde(default)]
    pub status: StatusConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub schedule: BatchSchedule,
    #[serde(default = "default_listen")]
    pub listen: String,
    pub log_dir: PathBuf,
    /// Static dashboard assets served under `/ui/`; optional.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

impl ServiceConfig {
    pub fn system(&self) -> SystemConfig {
        SystemConfig { dedup: self.dedup, schedule: self.schedule, status: self.status, trace: self.trace }
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot read {}: {message}", path.display())]
    Read { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error("journal {} is corrupt at line {line}: {message}", path.display())]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: String, message: String },
}

/// SHA-256 of each loaded file, reported by the health endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigHashes {
    pub config: String,
    pub model: String,
    pub overlays: Vec<String>,
    pub credentials: String,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ServiceConfig,
    pub model: Arc<TwinModel>,
    pub credentials: CredentialStore,
    pub log_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    pub hashes: ConfigHashes,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, StartupError> {
    std::fs::read(path).map_err(|e| StartupError::Read { path: path.to_path_buf(), message: e.to_string() })
}

fn invalid(path: &Path, e: impl ToString) -> StartupError {
    StartupError::Invalid { path: path.to_path_buf(), message: e.to_string() }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let bytes = read(path)?;
        let config: ServiceConfig = serde_json::from_slice(&bytes).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| base.join(p);

        if !config.dedup.is_valid() || !config.trace.is_valid() || config.status.window_seconds <= 0 {
            return Err(invalid(path, "dedup, status or trace settings out of range"));
        }
        if config.schedule.tick_interval_seconds <= 0 {
            return Err(invalid(path, "tick_interval_seconds must be positive"));
        }

        let model_path = resolve(&config.model);
        let model_bytes = read(&model_path)?;
        let mut model = load_model(&model_bytes).map_err(|e| invalid(&model_path, e))?;
        let mut overlay_hashes = Vec::new();
        for rel in &config.overlays {
            let p = resolve(rel);
            let b = read(&p)?;
            let overlay: ModelOverlay = serde_json::from_slice(&b).map_err(|e| invalid(&p, e))?;
            model = derive_model(&model, &overlay).map_err(|e| invalid(&p, e))?;
            overlay_hashes.push(sha256_hex(&b));
        }

        let cred_path = resolve(&config.credentials);
        let cred_bytes = read(&cred_path)?;
        let creds: Vec<SourceCredential> = serde_json::from_slice(&cred_bytes).map_err(|e| invalid(&cred_path, e))?;
        if creds.is_empty() {
            return Err(invalid(&cred_path, "no sources configured"));
        }
        let credentials = CredentialStore::new(creds).map_err(|e| invalid(&cred_path, e))?;

        Ok(LoadedConfig {
            log_dir: resolve(&config.log_dir),
            ui_dir: config.ui_dir.as_deref().map(resolve),
            model: Arc::new(model),
            credentials,
            hashes: ConfigHashes {
                config: sha256_hex(&bytes),
                model: sha256_hex(&model_bytes),
                overlays: overlay_hashes,
                credentials: sha256_hex(&cred_bytes),
            },
            config,
        })
    }
}
