use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_inner: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Experts per sparse decoder FFN.
    pub experts: usize,
    /// Behavior injection applies to the first `n_bi` encoder and decoder layers.
    pub n_bi: usize,
    pub d_beh: usize,
    pub dropout: f64,
    /// Longest encoder input accepted, in tokens.
    pub max_encoder_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            d_inner: 128,
            heads: 4,
            head_dim: 16,
            encoder_layers: 2,
            decoder_layers: 2,
            experts: 5,
            n_bi: 2,
            d_beh: 16,
            dropout: 0.0,
            max_encoder_len: 2 + 50 * 4,
            init_seed: 0,
        }
    }

    /// Full-size model: 256/512, 6 heads of 64, 4 + 4 layers.
    pub fn full() -> Self {
        Self {
            d_model: 256,
            d_inner: 512,
            heads: 6,
            head_dim: 64,
            encoder_layers: 4,
            decoder_layers: 4,
            experts: 5,
            n_bi: 2,
            d_beh: 64,
            dropout: 0.1,
            max_encoder_len: 2 + 50 * 4,
            init_seed: 0,
        }
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_inner == 0 || self.heads == 0 || self.head_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("at least one encoder and one decoder layer are required".into());
        }
        if self.experts == 0 {
            return bad("experts must be at least 1".into());
        }
        if self.n_bi > self.encoder_layers.min(self.decoder_layers) {
            return bad(format!(
                "n_bi = {} exceeds the smaller layer stack ({})",
                self.n_bi,
                self.encoder_layers.min(self.decoder_layers)
            ));
        }
        if self.n_bi > 0 && self.d_beh == 0 {
            return bad("behavior injection needs d_beh > 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if self.max_encoder_len < 3 {
            return bad("max_encoder_len must be at least 3".into());
        }
        Ok(())
    }
}

/// Optimization schedule for [`train`](super::train).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Linear warm-up length; 0 keeps the learning rate constant.
    pub warmup_steps: usize,
    /// History items kept per example.
    pub max_history: usize,
    /// Use every prefix of the training region as an example instead of only
    /// the last training interaction.
    pub sliding_window: bool,
    pub eval_every: usize,
    pub log_every: usize,
    /// Global-norm clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.005,
            warmup_steps: 0,
            max_history: 50,
            sliding_window: false,
            eval_every: 500,
            log_every: 50,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}
