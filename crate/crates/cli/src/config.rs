use std::path::Path;

use mbgen_core::seqmodel::{ModelConfig, TrainConfig};
use mbgen_core::tokenizer::TokenizerConfig;
use mbgen_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Decoding and evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub n_beams: usize,
    /// Results per query.
    pub n: usize,
    /// Users scored by `evaluate`, `predict` and `sweep-beams`; 0 means all.
    pub users: usize,
    /// Validation users used for checkpoint selection during training.
    pub val_users: usize,
    pub val_beams: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            n_beams: 50,
            n: 10,
            users: 0,
            val_users: 300,
            val_beams: 20,
        }
    }
}

/// Everything a run needs besides file paths. Loaded from TOML, then
/// overridden by command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Hash buckets for user tokens.
    pub user_buckets: usize,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            user_buckets: 2000,
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the global seed into every stage so one number fixes the run.
    pub fn propagate_seed(&mut self) {
        self.tokenizer.seed = self.seed;
        self.model.init_seed = self.seed;
        self.train.seed = self.seed;
    }
}
