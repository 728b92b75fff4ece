//! Numeric substrate: tensors, reverse-mode differentiation, transformer
//! blocks, Adam with a Noam schedule, and parameter checkpoints.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, OpCounters, Var};
pub use layers::{causal_self_attention, AttentionParams, Block, LayerNorm, Linear, Transformer, INIT_STD};
pub use optim::{lr_schedule, optimizer_step, AdamConfig, OptimizerState};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use graph::log_softmax_into;
