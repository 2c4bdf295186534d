//! Residual-quantization baseline: one shared codebook per level, then an
//! enumeration digit that separates items colliding on all levels.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::quantizer::{FitReport, QuantizedAutoencoder};
use super::stats::{code_distribution_stats, CodeStats};
use super::{CodeAssignment, TokenizerConfig};
use crate::numerics::{Checkpoint, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RqVaeFit {
    pub autoencoder: QuantizedAutoencoder,
    pub report: FitReport,
    /// `levels` quantized digits plus the trailing enumeration digit.
    pub codes: CodeAssignment,
    pub levels: usize,
    /// Histogram statistics over the quantized levels, with the collision
    /// count at depth `levels`.
    pub stats: CodeStats,
}

/// Appends a digit numbering items `0, 1, ...` (ascending item id) within each
/// group of identical prefixes. Its cardinality is the largest group size.
pub fn disambiguate(prefixes: &[Vec<u32>], prefix_cards: &[usize]) -> Result<CodeAssignment> {
    let mut seen: BTreeMap<&[u32], u32> = BTreeMap::new();
    let mut codes = Vec::with_capacity(prefixes.len());
    for p in prefixes {
        let slot = seen.entry(p.as_slice()).or_insert(0);
        let mut code = p.clone();
        code.push(*slot);
        *slot += 1;
        codes.push(code);
    }
    let extra = seen.values().copied().max().unwrap_or(1).max(1) as usize;
    let mut cards = prefix_cards.to_vec();
    cards.push(extra);
    CodeAssignment::new(cards, &codes)
}

pub fn fit_rqvae_baseline(
    features: &Tensor,
    cfg: &TokenizerConfig,
    levels: usize,
) -> Result<RqVaeFit> {
    if levels < 2 {
        return Err(Error::Config(format!(
            "the residual baseline needs at least 2 levels, got {levels}"
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Config("no item features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let (autoencoder, report) = QuantizedAutoencoder::fit(features, cfg, levels, &mut rng)?;
    let z = autoencoder.encode(features)?;
    let a = autoencoder.assign(&z);
    let codes = disambiguate(&a.digits, &vec![cfg.k; levels])?;
    let stats = code_distribution_stats(&codes, levels);
    Ok(RqVaeFit {
        autoencoder,
        report,
        codes,
        levels,
        stats,
    })
}

impl RqVaeFit {
    pub fn write_state(&self, ckpt: &mut Checkpoint) {
        let ae = &self.autoencoder;
        ckpt.push_params("ae.", &ae.params);
        for (l, cb) in ae.codebooks.iter().enumerate() {
            ckpt.push_f64(format!("codebook.{l}"), cb.shape(), cb.data().to_vec());
            ckpt.push_f64(
                format!("ema_count.{l}"),
                &[ae.ema_counts[l].len()],
                ae.ema_counts[l].clone(),
            );
        }
    }
}
