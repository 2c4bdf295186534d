use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beam::{beam_search_many, check_search, search_encoded, QUERY_CHUNK};
use super::{CodeTrie, Prediction, Prompt, RankedPrediction};
use crate::datamodel::BehaviorVocab;
use crate::seqmodel::{EncodedBatch, Seq2Seq};
use crate::tokenizer::BOS;
use crate::{Error, Result};

/// Splits `n` slots proportionally to `p` by largest remainder: every
/// behavior gets `floor(p_i·n)`, then the leftover slots go to the largest
/// fractional parts, ties to larger `p_i`, then to the lower index.
pub fn allocate_slots(p: &[f64], n: usize) -> Result<Vec<usize>> {
    if p.is_empty() || p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config(format!(
            "invalid behavior distribution {p:?}"
        )));
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("behavior distribution sums to zero".into()));
    }
    let shares: Vec<f64> = p.iter().map(|x| x / total * n as f64).collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| (s + 1e-9).floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    let rem = |i: usize| (shares[i] - alloc[i] as f64).max(0.0);
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() > 1e-9 {
            rb.total_cmp(&ra)
        } else {
            p[b].total_cmp(&p[a]).then(a.cmp(&b))
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    Ok(alloc)
}

/// Where behavior-aware sampling gets its behavior proportions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum BehaviorPrior {
    /// The model's first decoding step, renormalized over behavior tokens.
    #[default]
    Model,
    /// Fixed proportions, e.g. corpus behavior frequencies.
    Fixed(Vec<f64>),
}

/// Log-probability of every behavior token at the first decoding step
/// (normalized over the whole vocabulary, as in joint beam scores).
pub fn behavior_log_probs(model: &Seq2Seq, enc: &EncodedBatch) -> Result<Vec<Vec<f64>>> {
    let owners: Vec<usize> = (0..enc.len()).collect();
    let prefixes = vec![vec![BOS]; enc.len()];
    let range = model.vocab.behavior_range();
    Ok(model
        .next_log_probs(enc, &owners, &prefixes)?
        .into_iter()
        .map(|lp| lp[range.start as usize..range.end as usize].to_vec())
        .collect())
}

/// Most likely next behavior per user (lowest index on ties).
pub fn predict_next_behavior(model: &Seq2Seq, encoders: &[Vec<u32>]) -> Result<Vec<u32>> {
    let chunks: Vec<Vec<u32>> = encoders
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let enc = model.encode_batch(chunk)?;
            Ok(behavior_log_probs(model, &enc)?
                .iter()
                .map(|lp| {
                    lp.iter()
                        .enumerate()
                        .fold(0, |best, (i, &x)| if x > lp[best] { i } else { best })
                        as u32
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn predict_target_behavior(
    model: &Seq2Seq,
    trie: &CodeTrie,
    behaviors: &BehaviorVocab,
    encoder: &[u32],
    n_beams: usize,
    n: usize,
) -> Result<RankedPrediction> {
    predict_behavior_specific(model, trie, encoder, behaviors.target(), n_beams, n)
}

pub fn predict_behavior_specific(
    model: &Seq2Seq,
    trie: &CodeTrie,
    encoder: &[u32],
    behavior: u32,
    n_beams: usize,
    n: usize,
) -> Result<RankedPrediction> {
    let mut r = beam_search_many(
        model,
        trie,
        &[encoder.to_vec()],
        &[Prompt::Behavior(behavior)],
        n_beams,
        n,
    )?;
    Ok(r.pop().expect("one query"))
}

pub fn predict_behavior_item(
    model: &Seq2Seq,
    trie: &CodeTrie,
    encoder: &[u32],
    n_beams: usize,
    n: usize,
) -> Result<RankedPrediction> {
    let mut r = beam_search_many(
        model,
        trie,
        &[encoder.to_vec()],
        &[Prompt::Joint],
        n_beams,
        n,
    )?;
    Ok(r.pop().expect("one query"))
}

/// Allocates the `n` slots across behaviors in proportion to the behavior
/// distribution, fills each behavior's share from a conditional beam search
/// with `n_beams` beams, and ranks the union by joint log-probability
/// `log p(b) + log p(item | b)`.
pub fn behavior_aware_sampling_many(
    model: &Seq2Seq,
    trie: &CodeTrie,
    encoders: &[Vec<u32>],
    n: usize,
    n_beams: usize,
    prior: &BehaviorPrior,
) -> Result<Vec<RankedPrediction>> {
    check_search(trie, model, n_beams.max(n), n)?;
    if n_beams == 0 {
        return Err(Error::Beam("n_beams must be at least 1".into()));
    }
    let nb = model.vocab.n_behaviors();
    if let BehaviorPrior::Fixed(p) = prior {
        if p.len() != nb {
            return Err(Error::Config(format!(
                "prior has {} entries for {nb} behaviors",
                p.len()
            )));
        }
    }
    let chunks: Vec<Vec<RankedPrediction>> = encoders
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let enc = model.encode_batch(chunk)?;
            let logp_b = behavior_log_probs(model, &enc)?;
            let allocs: Vec<Vec<usize>> = logp_b
                .iter()
                .map(|lp| match prior {
                    BehaviorPrior::Model => {
                        allocate_slots(&lp.iter().map(|x| x.exp()).collect::<Vec<_>>(), n)
                    }
                    BehaviorPrior::Fixed(p) => allocate_slots(p, n),
                })
                .collect::<Result<_>>()?;
            let mut merged: Vec<Vec<Prediction>> = vec![Vec::new(); chunk.len()];
            for b in 0..nb {
                let users: Vec<usize> = (0..chunk.len()).filter(|&u| allocs[u][b] > 0).collect();
                if users.is_empty() {
                    continue;
                }
                let width = n_beams.max(users.iter().map(|&u| allocs[u][b]).max().unwrap_or(0));
                let queries: Vec<(usize, Prompt)> = users
                    .iter()
                    .map(|&u| (u, Prompt::Behavior(b as u32)))
                    .collect();
                let results = search_encoded(model, trie, &enc, &queries, width)?;
                for (&u, r) in users.iter().zip(results) {
                    merged[u].extend(r.entries.into_iter().take(allocs[u][b]).map(|p| {
                        Prediction {
                            score: p.score + logp_b[u][b],
                            ..p
                        }
                    }));
                }
            }
            Ok(merged
                .into_iter()
                .map(|mut entries| {
                    entries.sort_by(|a, b| {
                        b.score
                            .total_cmp(&a.score)
                            .then(a.behavior.cmp(&b.behavior))
                            .then(a.item.cmp(&b.item))
                    });
                    RankedPrediction { entries }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn behavior_aware_sampling(
    model: &Seq2Seq,
    trie: &CodeTrie,
    encoder: &[u32],
    n: usize,
    n_beams: usize,
    prior: &BehaviorPrior,
) -> Result<RankedPrediction> {
    let mut r = behavior_aware_sampling_many(model, trie, &[encoder.to_vec()], n, n_beams, prior)?;
    Ok(r.pop().expect("one query"))
}

/// `query,rank,behavior,item,score` with rank starting at 1.
pub fn write_predictions(
    path: &Path,
    queries: &[String],
    predictions: &[RankedPrediction],
    behaviors: &BehaviorVocab,
    item_labels: &[String],
) -> Result<()> {
    let mut s = String::from("query,rank,behavior,item,score\n");
    for (q, r) in queries.iter().zip(predictions) {
        for (rank, p) in r.entries.iter().enumerate() {
            s.push_str(&format!(
                "{q},{},{},{},{:.9}\n",
                rank + 1,
                behaviors.name(p.behavior),
                item_labels[p.item as usize],
                p.score
            ));
        }
    }
    crate::io::write_atomic(path, s.as_bytes())
}
