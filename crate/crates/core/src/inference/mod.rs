//! Constrained beam search over the code trie and the prediction tasks built on it.

mod beam;
mod tasks;
mod trie;

pub use beam::{
    beam_search, beam_search_many, compare_ranked, search_encoded, Prediction, Prompt,
    RankedPrediction, PREFIX_CHUNK, QUERY_CHUNK,
};
pub use tasks::{
    allocate_slots, behavior_aware_sampling, behavior_aware_sampling_many, behavior_log_probs,
    predict_behavior_item, predict_behavior_specific, predict_next_behavior,
    predict_target_behavior, write_predictions, BehaviorPrior,
};
pub use trie::CodeTrie;
