//! Single-task and joint training on synthetic corpora, scored by greedy
//! exact-match token accuracy on the held-out split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::synthetic::{gen_synthetic_task, to_patch_sequences, toy_vocab, SyntheticRule, SyntheticTaskSpec};
use crate::error::{bail, Result};
use crate::model::{LossMask, ModelConfig, MultiScaleModel};
use crate::nn::AdamConfig;
use crate::task::{PatchSequence, ResamplingConfig, TaskExample, TemplateRegistry, Vocabulary};
use crate::train::{generation_accuracy, train_model, train_with_sampler, TrainConfig, TrainReport};

/// Training examples held back for early stopping.
pub const VALIDATION_SHARE: f64 = 0.05;

/// Model for the toy studies: `D_g = 64` over four layers, a half-width local model.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        global_width: 64,
        global_layers: 4,
        global_heads: 4,
        global_ff: 256,
        local_width: 32,
        local_layers: 2,
        local_heads: 4,
        local_ff: 128,
        continuous_dim: 1,
        max_patches: 64,
        ..ModelConfig::default()
    }
}

/// At most 3000 steps of 16 sequences, loss on the target only, stopping
/// once validation accuracy reaches 99.9%.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 3000,
        batch_size: 16,
        loss_mask: LossMask::TargetOnly,
        optimizer: AdamConfig { peak_lr: 2e-3, warmup: 100, ..AdamConfig::default() },
        eval_every: 100,
        stop_accuracy: 0.999,
        seed,
        ..TrainConfig::default()
    }
}

/// Corpus of one task, split and patched.
pub struct PreparedTask {
    pub spec: SyntheticTaskSpec,
    pub train: Vec<PatchSequence>,
    pub valid: Vec<PatchSequence>,
    pub eval: Vec<TaskExample>,
}

pub fn prepare_task(spec: &SyntheticTaskSpec, vocab: &Vocabulary, registry: &TemplateRegistry, max_patches: usize) -> Result<PreparedTask> {
    let (train, eval) = gen_synthetic_task(spec, vocab)?;
    let mut train = to_patch_sequences(vocab, registry, &train, spec.n_q, max_patches)?;
    let n_valid = ((train.len() as f64 * VALIDATION_SHARE).round() as usize).clamp(1, train.len().saturating_sub(1).max(1));
    let valid = if train.len() > 1 { train.split_off(train.len() - n_valid) } else { vec![] };
    Ok(PreparedTask { spec: spec.clone(), train, valid, eval })
}

fn shared_vocab(specs: &[SyntheticTaskSpec]) -> Result<Vocabulary> {
    let Some(first) = specs.first() else { bail!(Input, "no task specs") };
    if specs.iter().any(|s| (s.n_q, s.codebook_size) != (first.n_q, first.codebook_size)) {
        bail!(Config, "incompatible vocabularies: tasks disagree on the audio grid shape");
    }
    let symbols = specs.iter().map(|s| s.symbols).max().unwrap();
    toy_vocab(first.n_q, first.codebook_size, symbols)
}

fn sized(model: &ModelConfig, vocab: &Vocabulary, n_q: usize) -> ModelConfig {
    ModelConfig { n_q, vocab_size: vocab.size(), ..model.clone() }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyRun {
    pub rule: SyntheticRule,
    pub accuracy: f64,
    pub report: TrainReport,
}

/// Trains one model on one synthetic task and scores it on its eval split.
pub fn run_toy_task(spec: &SyntheticTaskSpec, model: &ModelConfig, train: &TrainConfig) -> Result<(MultiScaleModel, ToyRun)> {
    let vocab = shared_vocab(std::slice::from_ref(spec))?;
    let registry = TemplateRegistry::default_registry();
    let mc = sized(model, &vocab, spec.n_q);
    let task = prepare_task(spec, &vocab, &registry, mc.max_patches)?;
    let mut m = MultiScaleModel::new(mc, train.seed)?;
    let report = train_model(&mut m, &task.train, &task.valid, train)?;
    let accuracy = generation_accuracy(&m, &vocab, &registry, &task.eval)?;
    Ok((m, ToyRun { rule: spec.rule, accuracy, report }))
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskAccuracy {
    pub rule: SyntheticRule,
    pub single: f64,
    pub joint: f64,
    pub single_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultitaskReport {
    pub alpha: f64,
    pub tasks: Vec<TaskAccuracy>,
    pub joint_steps: usize,
    /// `(step, teacher-forced validation accuracy)` of the joint model.
    pub joint_validation: Vec<(usize, f64)>,
    /// How often each task was drawn into joint batches.
    pub task_draws: Vec<u64>,
}

/// One joint model (tasks drawn by re-sampling weights with exponent `alpha`)
/// and one model per task, all under the same step budget.
pub fn run_multitask_study(specs: &[SyntheticTaskSpec], alpha: f64, model: &ModelConfig, train: &TrainConfig) -> Result<MultitaskReport> {
    if specs.len() < 2 {
        bail!(Input, "a multi-task study needs at least two tasks");
    }
    let vocab = shared_vocab(specs)?;
    let registry = TemplateRegistry::default_registry();
    let mc = sized(model, &vocab, specs[0].n_q);
    let tasks: Vec<PreparedTask> = specs.iter().map(|s| prepare_task(s, &vocab, &registry, mc.max_patches)).collect::<Result<_>>()?;

    let mut singles = Vec::with_capacity(tasks.len());
    for t in &tasks {
        let mut m = MultiScaleModel::new(mc.clone(), train.seed)?;
        let report = train_model(&mut m, &t.train, &t.valid, train)?;
        singles.push((generation_accuracy(&m, &vocab, &registry, &t.eval)?, report.steps_run));
    }

    // pool the corpora; a draw picks a task, then an example inside it
    let mut pool = Vec::new();
    let mut valid = Vec::new();
    let mut offsets = Vec::with_capacity(tasks.len());
    for t in &tasks {
        offsets.push((pool.len(), t.train.len()));
        pool.extend(t.train.iter().cloned());
        valid.extend(t.valid.iter().cloned());
    }
    let resampling = ResamplingConfig::new(tasks.iter().map(|t| t.train.len() as u64).collect(), alpha);
    let weights = crate::task::resample_weights(&resampling)?;
    let dist = rand::distributions::WeightedIndex::new(&weights).expect("validated weights");
    let mut draws = vec![0u64; tasks.len()];
    let mut joint = MultiScaleModel::new(mc, train.seed)?;
    let report = train_with_sampler(&mut joint, &pool, &valid, train, |rng: &mut ChaCha8Rng| {
        let task = rand::distributions::Distribution::sample(&dist, rng);
        draws[task] += 1;
        let (start, len) = offsets[task];
        start + rng.gen_range(0..len)
    })?;

    let mut out = Vec::with_capacity(tasks.len());
    for (t, (single, single_steps)) in tasks.iter().zip(singles) {
        out.push(TaskAccuracy {
            rule: t.spec.rule,
            single,
            joint: generation_accuracy(&joint, &vocab, &registry, &t.eval)?,
            single_steps,
        });
    }
    Ok(MultitaskReport { alpha, tasks: out, joint_steps: report.steps_run, joint_validation: report.validation, task_draws: draws })
}

/// Task frequencies of `draws` re-sampled picks.
pub fn resampling_frequencies(counts: &[u64], alpha: f64, draws: usize, seed: u64) -> Result<Vec<u64>> {
    let w = crate::task::resample_weights(&ResamplingConfig::new(counts.to_vec(), alpha))?;
    let dist = rand::distributions::WeightedIndex::new(&w).expect("validated weights");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freq = vec![0u64; counts.len()];
    for _ in 0..draws {
        freq[rand::distributions::Distribution::sample(&dist, &mut rng)] += 1;
    }
    Ok(freq)
}
