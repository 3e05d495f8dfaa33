use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use banditry_core::service::{DecisionService, ServiceOptions};
use tokio::net::TcpListener;

use crate::api::{router, AppState};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub admin_token: String,
    /// Worker threads; 1 runs everything on the current thread.
    pub threads: Option<usize>,
    pub sync: bool,
    pub compact_every: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot open data directory: {0}")]
    Open(#[from] banditry_core::service::ServiceError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Opens the data directory and serves until interrupted. The bound address
/// is printed to stdout as `listening on http://ADDR`.
pub fn run(config: ServeConfig) -> Result<(), ServeError> {
    let mut options = ServiceOptions::default();
    options.store.sync = config.sync;
    options.store.compact_every = config.compact_every;
    let service = DecisionService::open(&config.data_dir, options)?;
    let state = Arc::new(AppState::new(service, config.admin_token.clone()));
    let runtime = match config.threads {
        Some(1) => tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()?,
        Some(n) => tokio::runtime::Builder::new_multi_thread()
            .worker_threads(n)
            .enable_all()
            .build()?,
        None => tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?,
    };
    runtime.block_on(async {
        let listener = TcpListener::bind(config.addr).await?;
        let mut out = std::io::stdout();
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        out.flush()?;
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(shutdown_signal())
            .await
    })?;
    // fold the append log so the next start replays less
    if let Err(e) = state.service.store().compact() {
        eprintln!("warning: compaction on shutdown failed: {e}");
    }
    Ok(())
}

async fn shutdown_signal() {
    let interrupt = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("signal handler installs");
        tokio::select! {
            _ = interrupt => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = interrupt.await;
    }
}
