//! Annotation campaign service.
//!
//! A campaign hands out bounded sessions of items to raters, accepts their
//! ratings strictly in session order, and persists everything as an
//! append-only event log so a restart replays to the same state. Completed
//! (or partial) campaigns export to the ratings file format of
//! `editbench_core::dataset`.

pub mod api;
pub mod config;
pub mod log;
pub mod simulate;
pub mod state;
pub mod store;

pub use config::{CampaignConfig, ConfigError, Durability, ServiceConfig};
pub use state::{CampaignError, CampaignState, Event, Progress, RatingSubmission, Session, SessionStatus};
pub use store::{Ack, CampaignStore, CurrentItem, Export, ExportMeta, SessionView, StoreOptions};

use std::sync::Arc;

/// Binds the configured address and opens the store; split out so callers
/// can tell a bad data directory from a taken port.
pub async fn bind(config: &ServiceConfig) -> Result<(tokio::net::TcpListener, Arc<CampaignStore>), BindError> {
    let store = CampaignStore::open(
        &config.data_dir,
        StoreOptions {
            durability: config.durability,
            snapshot_every: config.snapshot_every,
        },
    )
    .map_err(BindError::Store)?;
    let listener = tokio::net::TcpListener::bind(config.addr())
        .await
        .map_err(|e| BindError::Listen(config.addr(), e))?;
    Ok((listener, Arc::new(store)))
}

#[derive(Debug, thiserror::Error)]
pub enum BindError {
    #[error("cannot open data directory: {0}")]
    Store(CampaignError),
    #[error("cannot listen on {0}: {1}")]
    Listen(std::net::SocketAddr, #[source] std::io::Error),
}
