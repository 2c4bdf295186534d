//! Item codes, the token vocabulary, and model sequences.

mod cid;
mod codes;
mod config;
pub mod kmeans;
mod quantizer;
mod rqvae;
mod sequence;
mod sid;
mod state;
mod stats;
mod vocab;

pub use cid::{build_cid, cid_integers, from_base_digits, to_base_digits};
pub use codes::CodeAssignment;
pub use config::TokenizerConfig;
pub use quantizer::{quantize_vector, Assignment, FitReport, QuantizedAutoencoder};
pub use rqvae::{disambiguate, fit_rqvae_baseline, RqVaeFit};
pub use sequence::{build_model_sequence, encode_history, ModelSequence};
pub use sid::{assign_level3, fit_level1, fit_level2, fit_sid, Level1, Level2Group, SidFit};
pub use state::{TokenizerArtifact, TokenizerKind};
pub use stats::{
    code_distribution_stats, collision_count, histogram_variance, minimal_variance, CodeStats,
    LevelStats,
};
pub use vocab::{hash_user, Role, Vocabulary, BOS, EOS, PAD};

#[cfg(test)]
mod tests;
