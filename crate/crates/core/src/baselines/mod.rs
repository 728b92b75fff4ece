//! Prediction-order baselines: layouts over the `T × n_q` grid and a single
//! causal transformer that trains on any of them.

mod layout;
mod model;

pub use layout::{
    attention_cost, layout, layout_coarse_first, layout_delay, layout_flatten, layout_parallel, multiscale_attention_cost, AttentionCost,
    Cell, LayoutKind, LayoutSpec,
};
pub use model::{baseline_train_step, match_param_budget, BaselineConfig, LayoutModel};
