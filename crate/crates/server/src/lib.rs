//! HTTP API over [`copilot_app::Service`].
//!
//! Instructor routes require `Authorization: Bearer <token>` when a token
//! is configured. Student routes authenticate with the per-record
//! capability issued at delivery. Every error body is an [`ApiError`].

mod error;
pub mod openapi;
mod routes;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::ApiError;
pub use routes::{router, AppState, Params, Principal, BODY_LIMIT};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(state))).await
}
