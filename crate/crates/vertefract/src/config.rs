//! Experiment configuration: one TOML file covering phantom generation,
//! the network, the training regime and evaluation. Every field has a
//! default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::CvConfig;
use crate::network::{NetworkConfig, Variant};
use crate::phantom::PhantomSpec;
use crate::seeds;
use crate::trainer::TrainingConfig;

/// Architecture selection: a named variant, optionally downsized to a
/// uniform channel width or overridden with explicit channel plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub variant: Variant,
    /// When set, use a uniform plan of this width instead of the
    /// calibrated 230K-parameter plan.
    pub width: Option<usize>,
    pub conv_channels: Option<Vec<usize>>,
    pub fusion_channels: Option<Vec<usize>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            variant: Variant::ThreeD,
            width: None,
            conv_channels: None,
            fusion_channels: None,
        }
    }
}

impl NetworkSection {
    pub fn to_network_config(&self) -> Result<NetworkConfig> {
        let mut cfg = match self.width {
            Some(w) => NetworkConfig::downsized(self.variant, w),
            None => NetworkConfig::for_variant(self.variant),
        };
        if let Some(ch) = &self.conv_channels {
            cfg.conv_channels = ch.clone();
        }
        if let Some(fh) = &self.fusion_channels {
            cfg.fusion_channels = fh.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The whole experiment in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub network: NetworkSection,
    pub training: TrainingConfig,
    pub evaluation: CvConfig,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.training.validate()?;
        self.network.to_network_config().map(|_| ())
    }

    /// Re-key every subsystem seed from one master seed. All randomness in
    /// an experiment flows from here.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.phantom.seed = seeds::derive_seed(seed, "experiment/phantom");
        self.training.seed = seeds::derive_seed(seed, "experiment/training");
        self.evaluation.seed = seeds::derive_seed(seed, "experiment/evaluation");
    }
}
