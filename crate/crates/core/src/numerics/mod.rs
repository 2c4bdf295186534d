//! Dense tensors, a reverse-mode gradient tape, optimizers and checkpoints.

mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{ArrayData, Checkpoint, NamedArray};
pub use optim::{adagrad_step, adamw_step, AdagradConfig, AdagradState, AdamState, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{CrossEntropyLoss, Gradients, Graph, ParamGrads, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
