//! Session service for live architect/builder sessions.
//!
//! Sessions run on their own threads and commit every dialogue event to an
//! ordered per-session log. Clients create sessions and post human turns
//! over HTTP, read world snapshots at any committed index, and follow the
//! log over a WebSocket stream that resumes from a given index.
//!
//! | method | path | |
//! |---|---|---|
//! | `POST` | `/sessions` | create a session |
//! | `GET` | `/sessions` | list sessions |
//! | `GET` | `/sessions/{id}` | session summary |
//! | `POST` | `/sessions/{id}/messages` | post a human turn |
//! | `GET` | `/sessions/{id}/world?at={index}` | world snapshot |
//! | `GET` (WebSocket) | `/sessions/{id}/stream?from={index}` | event stream |
//! | `GET` | `/targets` | bundled and configured target names |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use blockwork_core::agents::Speaker;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod api;
pub mod registry;
pub mod targets;

pub use api::router;
pub use registry::{
    AgentSpec, CreateSession, PostMessage, Registry, Session, SessionStatus, SessionSummary, WireEvent,
    WorldSnapshot,
};
pub use targets::TargetLibrary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServerError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("unknown model: {0}")]
    UnknownModel(String),
    #[error("unknown session: {0}")]
    UnknownSession(String),
    #[error("it is not the {0}'s turn")]
    NotYourTurn(Speaker),
    #[error("session has finished")]
    SessionFinished,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("io error: {0}")]
    Io(String),
}

impl ServerError {
    /// Stable machine-readable code used in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::InvalidConfig(_) => "invalid_config",
            ServerError::UnknownTarget(_) => "unknown_target",
            ServerError::UnknownModel(_) => "unknown_model",
            ServerError::UnknownSession(_) => "unknown_session",
            ServerError::NotYourTurn(_) => "not_your_turn",
            ServerError::SessionFinished => "session_finished",
            ServerError::BadRequest(_) => "bad_request",
            ServerError::Io(_) => "io_error",
        }
    }
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_retain_finished() -> usize {
    64
}

fn default_human_timeout_secs() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Extra `<name>.json` targets layered over the bundled set.
    #[serde(default)]
    pub target_library: Option<PathBuf>,
    /// Finished transcripts are written here as `<id>.jsonl`.
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    /// Finished sessions kept in memory; older ones are served from the store.
    #[serde(default = "default_retain_finished")]
    pub retain_finished: usize,
    /// Delay after each committed event.
    #[serde(default)]
    pub pace_ms: u64,
    #[serde(default = "default_human_timeout_secs")]
    pub human_timeout_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: default_host(),
            port: default_port(),
            target_library: None,
            store_dir: None,
            retain_finished: default_retain_finished(),
            pace_ms: 0,
            human_timeout_secs: default_human_timeout_secs(),
        }
    }
}

impl ServerConfig {
    pub fn addr(&self) -> Result<SocketAddr, ServerError> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|e| ServerError::InvalidConfig(format!("bad listen address: {e}")))
    }
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(registry: Arc<Registry>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Blocking entry point: builds a runtime, binds, and serves.
pub fn run(registry: Registry, config: &ServerConfig) -> Result<(), ServerError> {
    let addr = config.addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServerError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServerError::Io(format!("bind {addr}: {e}")))?;
        tracing::info!(%addr, "serving");
        serve(Arc::new(registry), listener)
            .await
            .map_err(|e| ServerError::Io(e.to_string()))
    })
}
