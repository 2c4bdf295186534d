use serde::{Deserialize, Serialize};

use super::kmeans::KMeansConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Digits per item.
    pub m: usize,
    /// Codebook size per digit.
    pub k: usize,
    pub beta: f64,
    pub latent_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub ema_decay: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops when the loss improved by less than `min_rel_improvement`
    /// (relative) over this many epochs.
    pub plateau_epochs: usize,
    pub min_rel_improvement: f64,
    /// Epochs a codebook entry may stay unused before it is re-seeded.
    pub dead_code_patience: usize,
    pub kmeans: KMeansConfig,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            m: 3,
            k: 16,
            beta: 0.25,
            latent_dim: 32,
            hidden: vec![64, 64],
            ema_decay: 0.99,
            lr: 0.01,
            batch_size: 256,
            max_epochs: 500,
            plateau_epochs: 10,
            min_rel_improvement: 1e-5,
            dead_code_patience: 1,
            kmeans: KMeansConfig::default(),
            seed: 0,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 2 {
            return bad("codebook size K must be at least 2");
        }
        if self.m < 2 {
            return bad("digits per item m must be at least 2");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)");
        }
        if self.latent_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("latent_dim, batch_size and max_epochs must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}
