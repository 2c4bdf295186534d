//! Encoder-decoder sequence model, its cost model and the training loop.

mod config;
mod flops;
mod model;
mod train;

pub use config::{ModelConfig, TrainConfig};
pub use flops::{count_params_flops, CostReport};
pub use model::{behavior_context, position_route, Batch, Dropout, EncodedBatch, Seq2Seq};
pub use train::{train, training_examples, LogRow, TrainReport, Validator};
