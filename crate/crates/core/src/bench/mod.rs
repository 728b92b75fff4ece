//! Synthetic corpora, training studies and the complexity benchmark.

mod complexity;
mod multitask;
mod stats;
mod synthetic;

pub use complexity::{
    fit_scaling_exponent, measure_cost, records_exponent, run_benchmark, run_cells, write_csv, BenchConfig, BenchRecord, CSV_HEADER,
};
pub use multitask::{
    prepare_task, resampling_frequencies, run_multitask_study, run_toy_task, toy_model_config, toy_train_config, MultitaskReport, PreparedTask, TaskAccuracy,
    ToyRun, VALIDATION_SHARE,
};
pub use synthetic::{gaussian_mixture, gen_synthetic_task, to_patch_sequences, toy_vocab, SyntheticRule, SyntheticTaskSpec};
pub use stats::chi_square_p;
