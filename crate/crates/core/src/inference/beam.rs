use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CodeTrie;
use crate::seqmodel::{EncodedBatch, Seq2Seq};
use crate::tokenizer::{Role, Vocabulary, BOS};
use crate::{Error, Result};

/// Users encoded together in one encoder pass.
pub const QUERY_CHUNK: usize = 32;
/// Prefixes decoded together in one decoder pass.
pub const PREFIX_CHUNK: usize = 256;

/// Decoder prompt: `[BOS]` or `[BOS, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prompt {
    Joint,
    Behavior(u32),
}

impl Prompt {
    pub fn tokens(self, vocab: &Vocabulary) -> Result<Vec<u32>> {
        match self {
            Prompt::Joint => Ok(vec![BOS]),
            Prompt::Behavior(b) => Ok(vec![BOS, vocab.behavior_token(b)?]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub behavior: u32,
    pub item: u32,
    pub score: f64,
}

/// Best-first `(behavior, item, score)` list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub entries: Vec<Prediction>,
}

impl RankedPrediction {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn items(&self) -> Vec<u32> {
        self.entries.iter().map(|p| p.item).collect()
    }

    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.entries.iter().map(|p| (p.behavior, p.item)).collect()
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
    node: usize,
}

/// Final ranking order: score descending, then token sequence ascending.
pub fn compare_ranked(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.cmp(b_tokens))
}

pub(crate) fn check_search(
    trie: &CodeTrie,
    model: &Seq2Seq,
    n_beams: usize,
    n: usize,
) -> Result<()> {
    if trie.is_empty() {
        return Err(Error::Beam("the code trie is empty".into()));
    }
    if trie.m() != model.vocab.m() {
        return Err(Error::Beam(format!(
            "trie codes have {} digits but the vocabulary expects {}",
            trie.m(),
            model.vocab.m()
        )));
    }
    if n == 0 {
        return Err(Error::Beam("N must be at least 1".into()));
    }
    if n_beams < n {
        return Err(Error::Beam(format!(
            "n_beams = {n_beams} is smaller than N = {n}"
        )));
    }
    Ok(())
}

/// Constrained, length-synchronous beam search for every `(owner, prompt)`
/// query against an already-encoded batch. Returns up to `n_beams` finished
/// tuples per query in final ranking order. Scores sum the log-probabilities
/// of generated tokens only (a prompted behavior is not scored).
///
/// Pruning keeps the `n_beams` best expansions ordered by score descending,
/// token id ascending, parent beam index ascending.
pub fn search_encoded(
    model: &Seq2Seq,
    trie: &CodeTrie,
    enc: &EncodedBatch,
    queries: &[(usize, Prompt)],
    n_beams: usize,
) -> Result<Vec<RankedPrediction>> {
    check_search(trie, model, n_beams, 1)?;
    let vocab = &model.vocab;
    let full = 1 + vocab.tuple_len();
    let mut beams: Vec<Vec<Hyp>> = queries
        .iter()
        .map(|&(_, p)| {
            Ok(vec![Hyp {
                tokens: p.tokens(vocab)?,
                score: 0.0,
                node: CodeTrie::ROOT,
            }])
        })
        .collect::<Result<_>>()?;

    loop {
        let Some(len) = beams
            .iter()
            .map(|b| b[0].tokens.len())
            .filter(|&l| l < full)
            .min()
        else {
            break;
        };
        let active: Vec<usize> = (0..beams.len())
            .filter(|&q| beams[q][0].tokens.len() == len)
            .collect();
        let mut owners = Vec::new();
        let mut prefixes = Vec::new();
        for &q in &active {
            for h in &beams[q] {
                owners.push(queries[q].0);
                prefixes.push(h.tokens.clone());
            }
        }
        let mut logp = Vec::with_capacity(prefixes.len());
        for start in (0..prefixes.len()).step_by(PREFIX_CHUNK) {
            let end = (start + PREFIX_CHUNK).min(prefixes.len());
            logp.extend(model.next_log_probs(enc, &owners[start..end], &prefixes[start..end])?);
        }
        let mut row = 0;
        for &q in &active {
            let mut cands: Vec<(f64, u32, usize, usize)> = Vec::new();
            for (pi, h) in beams[q].iter().enumerate() {
                let lp = &logp[row];
                row += 1;
                if h.tokens.len() == 1 {
                    for b in 0..vocab.n_behaviors() as u32 {
                        let tok = vocab.behavior_token(b)?;
                        cands.push((h.score + lp[tok as usize], tok, pi, CodeTrie::ROOT));
                    }
                } else {
                    let p = h.tokens.len() - 2;
                    for &(digit, child) in trie.children(h.node) {
                        let tok = vocab.digit_token(p, digit)?;
                        cands.push((h.score + lp[tok as usize], tok, pi, child));
                    }
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(n_beams);
            let parents = std::mem::take(&mut beams[q]);
            beams[q] = cands
                .into_iter()
                .map(|(score, tok, pi, node)| {
                    let mut tokens = parents[pi].tokens.clone();
                    tokens.push(tok);
                    Hyp {
                        tokens,
                        score,
                        node,
                    }
                })
                .collect();
            if beams[q].is_empty() {
                return Err(Error::Beam("no valid continuation".into()));
            }
        }
    }

    beams
        .into_iter()
        .map(|mut hyps| {
            hyps.sort_by(|a, b| compare_ranked(a.score, &a.tokens, b.score, &b.tokens));
            let entries = hyps
                .iter()
                .map(|h| {
                    let Role::Behavior(behavior) = vocab.role(h.tokens[1])? else {
                        return Err(Error::Beam(
                            "decoded tuple does not start with a behavior".into(),
                        ));
                    };
                    let item = trie.item(h.node).ok_or_else(|| {
                        Error::Beam("decoded code is not a complete item code".into())
                    })?;
                    Ok(Prediction {
                        behavior,
                        item,
                        score: h.score,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(RankedPrediction { entries })
        })
        .collect()
}

/// Beam search for many users. Encoders are processed in chunks of
/// [`QUERY_CHUNK`], in parallel on the rayon pool; results keep input order.
pub fn beam_search_many(
    model: &Seq2Seq,
    trie: &CodeTrie,
    encoders: &[Vec<u32>],
    prompts: &[Prompt],
    n_beams: usize,
    n: usize,
) -> Result<Vec<RankedPrediction>> {
    check_search(trie, model, n_beams, n)?;
    if encoders.len() != prompts.len() {
        return Err(Error::Beam(
            "one prompt per encoder input is required".into(),
        ));
    }
    let starts: Vec<usize> = (0..encoders.len()).step_by(QUERY_CHUNK).collect();
    let chunks: Vec<Vec<RankedPrediction>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + QUERY_CHUNK).min(encoders.len());
            let enc = model.encode_batch(&encoders[start..end])?;
            let queries: Vec<(usize, Prompt)> =
                (start..end).map(|i| (i - start, prompts[i])).collect();
            let mut res = search_encoded(model, trie, &enc, &queries, n_beams)?;
            for r in &mut res {
                r.truncate(n);
            }
            Ok(res)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn beam_search(
    model: &Seq2Seq,
    encoder: &[u32],
    prompt: Prompt,
    n_beams: usize,
    trie: &CodeTrie,
    n: usize,
) -> Result<RankedPrediction> {
    let mut r = beam_search_many(model, trie, &[encoder.to_vec()], &[prompt], n_beams, n)?;
    Ok(r.pop().expect("one query"))
}
