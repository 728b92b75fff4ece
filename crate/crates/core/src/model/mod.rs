//! The multi-scale (global/local) transformer and its training loss.

mod config;
mod multiscale;

pub use config::{LossMask, ModelConfig};
pub use multiscale::{loss_mask, position_nll, train_step, Activations, MultiScaleModel};
