//! The review service: an HTTP/JSON front end over the review store, the model registry
//! and background retraining.
//!
//! Endpoints (all under `/api`):
//!
//! | method | path | purpose |
//! |---|---|---|
//! | GET | `/tasks/next?reviewer=R` | assign the oldest pending task (204 when none) |
//! | POST | `/tasks` | enqueue doccano records, auto-annotating unlabeled ones |
//! | GET | `/abstracts/{id}` | abstract with spans, provenance, task state, sentences |
//! | PUT | `/abstracts/{id}/annotation` | replace spans (`label`, `expected_version`) |
//! | POST | `/abstracts/{id}/finalize` | confirm remaining auto spans, mark reviewed |
//! | GET | `/reports/confusion?last=N` | relabel counts over the last N corrections |
//! | POST | `/retrain?wait=&force=` | start a retraining job |
//! | GET | `/retrain` | retraining job status |
//! | GET | `/stats?partition=` | queue counts, model version, reviewed-corpus statistics |
//! | GET | `/saliency/{id}/{index}` | `{words, values, label}` for one sentence |
//! | GET | `/labels` | label codes, names, definitions and colours |
//!
//! Errors carry `{"error": ..}` plus `current_version` on version conflicts (409) and
//! `violations` on invalid spans (422).

pub mod api;
pub mod config;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use config::ServerConfig;
pub use state::AppState;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Review(#[from] movekit::review::ReviewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A running service.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<Result<(), ServerError>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests, lets in-flight ones finish and flushes the store.
    pub async fn shutdown(self) -> Result<(), ServerError> {
        let _ = self.shutdown.send(());
        self.task
            .await
            .map_err(|e| ServerError::Io(std::io::Error::other(e)))?
    }
}

/// Binds the configured address and serves in the background.
pub async fn spawn(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let addr = config.addr();
    let state = Arc::new(
        tokio::task::spawn_blocking(move || AppState::open(config))
            .await
            .map_err(|e| ServerError::Io(std::io::Error::other(e)))??,
    );
    spawn_with_state(state, addr).await
}

pub async fn spawn_with_state(
    state: Arc<AppState>,
    addr: SocketAddr,
) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = api::router(state.clone());
    let flush_state = state.clone();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await?;
        tokio::task::spawn_blocking(move || flush_state.flush())
            .await
            .map_err(|e| ServerError::Io(std::io::Error::other(e)))?
    });
    tracing::info!(%addr, "review service listening");
    Ok(ServerHandle {
        addr,
        state,
        shutdown: tx,
        task,
    })
}

/// Serves until Ctrl-C or SIGTERM, then shuts down gracefully.
pub async fn run(config: ServerConfig) -> Result<(), ServerError> {
    let handle = spawn(config).await?;
    shutdown_signal().await;
    tracing::info!("shutting down");
    handle.shutdown().await
}

async fn shutdown_signal() {
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
        _ = ctrl_c => {},
        _ = term => {},
    }
}
