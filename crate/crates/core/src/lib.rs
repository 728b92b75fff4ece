pub mod error;
pub mod nn;
pub mod codec;
pub mod tokenizers;
pub mod task;
pub mod model;
pub mod baselines;
pub mod inference;
pub mod train;
pub mod bench;
