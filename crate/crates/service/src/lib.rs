//! HTTP surfaces around the samtrack engine: the session API used by the
//! browser client and headless tools, and a stub model server that answers
//! the remote backend protocol from a synthetic scenario.

mod api;
mod error;
pub mod model_stub;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;

use samtrack_core::backends::BackendSelection;

pub use api::{router, SessionHandle, SessionState};
pub use error::ApiError;
pub use state::ProgressEvent;

/// Settings shared by all sessions of one service instance.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Per-session result directories are created under here.
    pub data_dir: PathBuf,
    /// Used when a session config names no backends.
    pub default_backends: Option<BackendSelection>,
}

pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "session service listening");
    axum::serve(listener, router(config)).await
}
