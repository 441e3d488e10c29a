//! HTTP service over the diagnosis pipeline plus a reader-study backend.
//!
//! Endpoints live under `/api/v1`: `diagnose` for uploads, `sessions` for
//! timed reading sessions in assisted or unassisted mode, and `report` for the
//! study statistics. Every JSON response is checked for ground-truth fields
//! before it leaves the server.

pub mod app;
pub mod cases;
pub mod config;
pub mod error;
pub mod leak;
pub mod report;
pub mod sessions;

use std::sync::Arc;

pub use app::{router, AppState, SharedState};
pub use config::ServiceConfig;
pub use error::ApiError;

/// Binds `0.0.0.0:{port}` and serves until the process ends.
pub async fn serve(state: AppState) -> std::io::Result<()> {
    let port = state.config.port;
    let app = router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
