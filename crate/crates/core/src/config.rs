use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploitation::RetrievalWeights;

/// Service configuration, read from a TOML file:
///
/// ```toml
/// listen_address = "127.0.0.1:7878"
/// data_directory = "./data"
/// heartbeat_interval_s = 15
/// session_timeout_s = 45
/// cf_min_co_raters = 1
///
/// [retrieval_weights]
/// role = 0.5
/// phase = 0.2
/// terms = 0.3
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub data_directory: PathBuf,
    pub heartbeat_interval_s: u64,
    pub session_timeout_s: u64,
    pub retrieval_weights: RetrievalWeights,
    pub cf_min_co_raters: usize,
    /// Write a snapshot file after this many log records; never when unset.
    pub snapshot_every: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_address: "127.0.0.1:7878".into(),
            data_directory: PathBuf::from("data"),
            heartbeat_interval_s: 15,
            session_timeout_s: 45,
            retrieval_weights: RetrievalWeights::default(),
            cf_min_co_raters: 1,
            snapshot_every: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ServiceConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        self.retrieval_weights.check()?;
        if self.heartbeat_interval_s == 0 || self.session_timeout_s <= self.heartbeat_interval_s {
            return Err(Error::InvalidConfig(
                "session_timeout_s must exceed a positive heartbeat_interval_s".into(),
            ));
        }
        if self.cf_min_co_raters == 0 {
            return Err(Error::InvalidConfig("cf_min_co_raters must be at least 1".into()));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::InvalidConfig("snapshot_every must be positive".into()));
        }
        Ok(())
    }

    pub fn session_timeout(&self) -> Duration {
        Duration::from_secs(self.session_timeout_s)
    }
}
