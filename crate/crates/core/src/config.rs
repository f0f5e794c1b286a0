//! Declarative TOML configuration with full defaulting.
//!
//! An empty file yields 24 levels, `2^22` rows per level and 2-wide features.
//! `[grid.probing]` enables learned probing; `Config::desk()` is the small
//! profile used by the test suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::earth4d::Earth4DConfig;
use crate::error::{Error, Result};
use crate::geocoords::NormalizationConfig;
use crate::hashgrid::GridConfig;
use crate::regressor::{HeadConfig, ModelConfig, TrainConfig};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "EARTH4D_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub normalization: NormalizationConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

impl Config {
    /// 8 levels, `2^14` rows per level, 2-wide features, minibatches of 256.
    pub fn desk() -> Self {
        Self {
            grid: GridConfig {
                num_levels: 8,
                log2_table_size: 14,
                feature_dim: 2,
                ..GridConfig::default()
            },
            train: TrainConfig {
                batch_size: 256,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" | "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected default or desk)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()
    }

    pub fn encoder_config(&self) -> Earth4DConfig {
        Earth4DConfig {
            grid: self.grid.clone(),
            overrides: None,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder_config(),
            normalization: self.normalization,
            head: self.head.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probing::{ProbeConfig, ProbeMode};

    #[test]
    fn empty_file_is_full_scale_default() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!((c.grid.num_levels, c.grid.log2_table_size, c.grid.feature_dim), (24, 22, 2));
        assert_eq!(c.encoder_config().output_dim(), 192);
    }

    #[test]
    fn partial_sections_default_the_rest() {
        let c = Config::from_toml(
            "[grid]\nnum_levels = 8\nlog2_table_size = 14\n[grid.probing]\nnum_probes = 4\n[train]\nseed = 7\nsplit = { spatial_block = { block_deg = 2.5 } }\n",
        )
        .unwrap();
        assert_eq!(c.grid.num_levels, 8);
        assert_eq!(
            c.grid.probing,
            Some(ProbeConfig { num_probes: 4, ..ProbeConfig::default() })
        );
        assert_eq!(c.grid.probing.unwrap().mode, ProbeMode::Hard);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.head, HeadConfig::default());
    }

    #[test]
    fn round_trips_and_rejects_typos() {
        let c = Config::desk();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert!(Config::from_toml("[grid]\nnum_level = 3\n").is_err());
        assert!(Config::from_toml("[grid]\nnum_levels = 0\n").is_err());
        assert!(Config::profile("huge").is_err());
    }
}
