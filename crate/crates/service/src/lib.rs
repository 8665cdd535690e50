//! HTTP service around the sopwatch core: event and ping ingestion, space
//! status, contact tracing and a live alert stream, backed by an on-disk
//! journal.

pub mod api;
pub mod config;
pub mod logfile;
pub mod recording;
pub mod replay;
pub mod report;
pub mod state;

use std::future::Future;
use std::time::Duration;

use tokio::net::TcpListener;

pub use api::router;
pub use config::{LoadedConfig, ServiceConfig, StartupError};
pub use state::{AppState, ClockMode, Shared};

/// Serves until `shutdown` resolves, then flushes the journal.
pub async fn serve_on(
    listener: TcpListener,
    state: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = (state.info.clock_mode == ClockMode::System).then(|| {
        let state = state.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_secs(1));
            loop {
                every.tick().await;
                let s = state.clone();
                // the lock is a std mutex; keep it off the async workers
                let _ = tokio::task::spawn_blocking(move || s.tick()).await;
            }
        })
    });
    let result = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await;
    if let Some(t) = ticker {
        t.abort();
    }
    state.flush();
    result
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}
