//! Multi-behavior generative recommendation.
//!
//! Items are tokenized into short balanced digit codes, every interaction
//! becomes a `[behavior, digit, digit, digit]` tuple, and an encoder-decoder
//! transformer with position-routed experts and behavior-injected feed-forward
//! layers learns to generate the next tuple. Constrained beam search over the
//! code trie turns the model into a ranker for three tasks: target-behavior,
//! behavior-specific, and joint behavior-item prediction.

pub mod datamodel;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod numerics;
pub mod seqmodel;
pub mod tokenizer;

pub use error::{Error, Result};
