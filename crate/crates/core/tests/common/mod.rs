#![allow(dead_code)]

use mbgen_core::numerics::kernels::log_softmax;
use mbgen_core::seqmodel::{ModelConfig, Seq2Seq};
use mbgen_core::tokenizer::{CodeAssignment, Vocabulary, BOS, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        d_inner: 24,
        heads: 2,
        head_dim: 8,
        encoder_layers: 1,
        decoder_layers: 2,
        experts: 5,
        n_bi: 1,
        d_beh: 4,
        dropout: 0.0,
        max_encoder_len: 64,
        init_seed: seed,
    }
}

/// Random distinct 3-digit codes over `k` values per digit.
pub fn random_codes(n_items: usize, k: usize, rng: &mut ChaCha8Rng) -> CodeAssignment {
    let mut all: Vec<Vec<u32>> = (0..k * k * k)
        .map(|i| vec![(i / (k * k)) as u32, ((i / k) % k) as u32, (i % k) as u32])
        .collect();
    for i in (1..all.len()).rev() {
        let j = rng.random_range(0..=i);
        all.swap(i, j);
    }
    all.truncate(n_items);
    CodeAssignment::new(vec![k; 3], &all).unwrap()
}

pub fn random_encoder(
    vocab: &Vocabulary,
    codes: &CodeAssignment,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let mut enc = vec![vocab.user_token_for_bucket(rng.random_range(0..vocab.n_users() as u32))];
    for _ in 0..len {
        let item = rng.random_range(0..codes.n_items() as u32);
        let b = rng.random_range(0..vocab.n_behaviors() as u32);
        enc.extend(vocab.tokenize_interaction(b, codes.code(item)).unwrap());
    }
    enc.push(EOS);
    enc
}

/// Every completion scored by teacher forcing over the full decoder input:
/// `(tokens, behavior, item, score)` sorted by score descending, then tokens
/// ascending. Scores cover the generated positions only.
pub fn exhaustive_ranking(
    model: &Seq2Seq,
    codes: &CodeAssignment,
    encoder: &[u32],
    prompt_behavior: Option<u32>,
) -> Vec<(Vec<u32>, u32, u32, f64)> {
    let v = &model.vocab;
    let behaviors: Vec<u32> = match prompt_behavior {
        Some(b) => vec![b],
        None => (0..v.n_behaviors() as u32).collect(),
    };
    let first_generated = if prompt_behavior.is_some() { 2 } else { 1 };
    let mut out = Vec::new();
    for &b in &behaviors {
        for item in 0..codes.n_items() as u32 {
            let mut dec = vec![BOS];
            dec.extend(v.tokenize_interaction(b, codes.code(item)).unwrap());
            let logits = model.logits(encoder, &dec[..dec.len() - 1]).unwrap();
            let mut score = 0.0;
            for pos in first_generated..dec.len() {
                score += log_softmax(logits.row(pos - 1))[dec[pos] as usize];
            }
            out.push((dec, b, item, score));
        }
    }
    out.sort_by(|a, b| b.3.total_cmp(&a.3).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
