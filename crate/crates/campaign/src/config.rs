use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PORT: &str = "EDITBENCH_PORT";
pub const ENV_DATA_DIR: &str = "EDITBENCH_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{var}: cannot parse `{value}`")]
    Env { var: &'static str, value: String },
    #[error("invalid campaign config: {0}")]
    Invalid(String),
}

/// Per-campaign settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub raters_per_item: usize,
    /// Items per session; 120 keeps a session under half an hour.
    pub session_item_cap: usize,
    pub randomize: bool,
    pub seed: u64,
    /// Idle time after which an open session expires and releases its unrated items.
    pub idle_timeout_secs: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            raters_per_item: 15,
            session_item_cap: 120,
            randomize: true,
            seed: 0,
            idle_timeout_secs: 30 * 60,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.raters_per_item == 0 {
            return Err(ConfigError::Invalid("raters_per_item must be at least 1".into()));
        }
        if self.session_item_cap == 0 {
            return Err(ConfigError::Invalid("session_item_cap must be at least 1".into()));
        }
        if self.idle_timeout_secs == 0 {
            return Err(ConfigError::Invalid("idle_timeout_secs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs(self.idle_timeout_secs)
    }
}

/// How hard each log append is pushed to disk before it is acknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Durability {
    /// `fdatasync` after every append.
    #[default]
    Sync,
    /// Write to the OS only. Survives a process kill, not a power cut.
    Flush,
}

/// Contents of the service config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    pub durability: Durability,
    /// Write a state snapshot every this many log events.
    pub snapshot_every: u64,
    /// Defaults for campaigns created without an explicit config.
    pub campaign: CampaignConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: PathBuf::from("campaign-data"),
            durability: Durability::Sync,
            snapshot_every: 256,
            campaign: CampaignConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads a TOML file, then applies the port and data-directory
    /// environment overrides. A relative `data_dir` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ServiceConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        config.apply_env(|var| std::env::var(var).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(value) = get(ENV_PORT) {
            self.port = value.trim().parse().map_err(|_| ConfigError::Env { var: ENV_PORT, value })?;
        }
        if let Some(value) = get(ENV_DATA_DIR) {
            if value.is_empty() {
                return Err(ConfigError::Env { var: ENV_DATA_DIR, value });
            }
            self.data_dir = PathBuf::from(value);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.snapshot_every == 0 {
            return Err(ConfigError::Invalid("snapshot_every must be at least 1".into()));
        }
        self.campaign.validate()
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}
