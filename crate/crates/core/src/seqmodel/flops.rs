use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Closed-form size and cost of one forward call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    /// Parameters of all experts in all sparse decoder FFNs.
    pub sparse_ffn_params: u64,
    /// Multiply-accumulates of every matrix product in one forward pass over
    /// an encoder input of `encoder_len` tokens and `decoder_len` decoder
    /// tokens, including the output projection at every decoder position.
    pub forward_macs: u64,
    /// MACs one decoder token spends in the sparse FFNs (one expert per layer).
    pub ffn_macs_per_token: u64,
}

fn ffn_params(input: u64, inner: u64, d: u64) -> u64 {
    input * inner + inner + inner * d + d
}

/// Counts parameters and multiply-accumulates. Layer norms, softmax and
/// embedding lookups are not counted as MACs.
pub fn count_params_flops(
    cfg: &ModelConfig,
    vocab_size: usize,
    n_behaviors: usize,
    decoder_len: usize,
    encoder_len: usize,
) -> CostReport {
    let d = cfg.d_model as u64;
    let a = cfg.attn_width() as u64;
    let di = cfg.d_inner as u64;
    let v = vocab_size as u64;
    let beh = cfg.d_beh as u64;
    let (le, t) = (encoder_len as u64, decoder_len as u64);
    let ln = 2 * d;
    let attn = 4 * d * a;
    let ffn_in = |layer: usize| d + if layer < cfg.n_bi { beh } else { 0 };

    let mut params = v * d + cfg.max_encoder_len as u64 * d + decoder_len as u64 * d;
    if cfg.n_bi > 0 {
        params += (n_behaviors as u64 + 1) * beh;
    }
    let mut macs = 0;
    for l in 0..cfg.encoder_layers {
        params += 2 * ln + attn + ffn_params(ffn_in(l), di, d);
        macs += le * attn + 2 * le * le * a + le * (ffn_in(l) * di + di * d);
    }
    let mut sparse = 0;
    let mut per_token = 0;
    for l in 0..cfg.decoder_layers {
        let expert = ffn_params(ffn_in(l), di, d);
        sparse += cfg.experts as u64 * expert;
        params += 3 * ln + 2 * attn;
        let token = ffn_in(l) * di + di * d;
        per_token += token;
        macs += t * attn + 2 * t * t * a; // self-attention
        macs += t * 2 * d * a + le * 2 * d * a + 2 * t * le * a; // cross-attention
        macs += t * token;
    }
    params += sparse + 2 * ln + d * v + v;
    macs += t * d * v;
    CostReport {
        params,
        sparse_ffn_params: sparse,
        forward_macs: macs,
        ffn_macs_per_token: per_token,
    }
}
