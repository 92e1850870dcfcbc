//! JSON configuration file shared by the subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use rawscale_core::gradcheck::GradcheckConfig;
use rawscale_core::{IspConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Every section is optional and falls back to its defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub isp: IspConfig,
    pub gradcheck: GradcheckConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(rawscale_core::Error::from)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .map_err(rawscale_core::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}
