use serde::{Deserialize, Serialize};

use super::{CodeAssignment, Vocabulary, BOS, EOS};
use crate::datamodel::Event;
use crate::{Error, Result};

/// One training or evaluation example in token space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSequence {
    /// `[user] ++ tuples(history) ++ [EOS]`.
    pub encoder: Vec<u32>,
    /// `[BOS, b, c_1, ..., c_m]`.
    pub decoder_input: Vec<u32>,
    /// `[b, c_1, ..., c_m, EOS]`.
    pub decoder_target: Vec<u32>,
}

/// Encoder tokens for an (already truncated) history.
pub fn encode_history(
    vocab: &Vocabulary,
    codes: &CodeAssignment,
    raw_user: &str,
    history: &[Event],
) -> Result<Vec<u32>> {
    if history.is_empty() {
        return Err(Error::Sequence("history is empty".into()));
    }
    let mut enc = Vec::with_capacity(2 + history.len() * vocab.tuple_len());
    enc.push(vocab.user_token(raw_user));
    for e in history {
        enc.extend(vocab.tokenize_interaction(e.behavior, codes.code(e.item))?);
    }
    enc.push(EOS);
    Ok(enc)
}

pub fn build_model_sequence(
    vocab: &Vocabulary,
    codes: &CodeAssignment,
    raw_user: &str,
    history: &[Event],
    target: Event,
) -> Result<ModelSequence> {
    let encoder = encode_history(vocab, codes, raw_user, history)?;
    let tuple = vocab.tokenize_interaction(target.behavior, codes.code(target.item))?;
    let mut decoder_input = Vec::with_capacity(tuple.len() + 1);
    decoder_input.push(BOS);
    decoder_input.extend_from_slice(&tuple);
    let mut decoder_target = tuple;
    decoder_target.push(EOS);
    Ok(ModelSequence {
        encoder,
        decoder_input,
        decoder_target,
    })
}
