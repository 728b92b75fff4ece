//! Training loop for the multi-scale model with periodic validation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::inference::{generate, SamplingConfig};
use crate::model::{train_step, LossMask, MultiScaleModel};
use crate::nn::{AdamConfig, OptimizerState};
use crate::task::{serialize_prefix, Patch, PatchSequence, TaskExample, TemplateRegistry, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Upper bound on patches per batch.
    pub patch_budget: usize,
    pub loss_mask: LossMask,
    pub optimizer: AdamConfig,
    /// Validate every this many steps (0 disables validation).
    pub eval_every: usize,
    /// Stop once teacher-forced validation accuracy reaches this value.
    pub stop_accuracy: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 8,
            patch_budget: 4096,
            loss_mask: LossMask::All,
            optimizer: AdamConfig::default(),
            eval_every: 100,
            stop_accuracy: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps_run: usize,
    pub losses: Vec<f64>,
    /// `(step, teacher-forced validation accuracy)`.
    pub validation: Vec<(usize, f64)>,
}

/// Trains on batches whose members are drawn by `pick` (an index into `train`).
pub fn train_with_sampler<F>(
    model: &mut MultiScaleModel,
    train: &[PatchSequence],
    valid: &[PatchSequence],
    cfg: &TrainConfig,
    mut pick: F,
) -> Result<TrainReport>
where
    F: FnMut(&mut ChaCha8Rng) -> usize,
{
    if train.is_empty() {
        bail!(Input, "empty training set");
    }
    if cfg.batch_size == 0 {
        bail!(Config, "batch_size must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(model.store(), cfg.optimizer);
    let mut report = TrainReport { steps_run: 0, losses: Vec::with_capacity(cfg.steps), validation: vec![] };
    for step in 1..=cfg.steps {
        let batch: Vec<PatchSequence> = (0..cfg.batch_size).map(|_| train[pick(&mut rng)].clone()).collect();
        report.losses.push(train_step(model, &mut opt, &batch, cfg.loss_mask, cfg.patch_budget)?);
        report.steps_run = step;
        if cfg.eval_every > 0 && !valid.is_empty() && (step % cfg.eval_every == 0 || step == cfg.steps) {
            let acc = teacher_forced_accuracy(model, valid)?;
            report.validation.push((step, acc));
            if acc >= cfg.stop_accuracy {
                break;
            }
        }
    }
    Ok(report)
}

/// Uniform sampling over `train`.
pub fn train_model(model: &mut MultiScaleModel, train: &[PatchSequence], valid: &[PatchSequence], cfg: &TrainConfig) -> Result<TrainReport> {
    let n = train.len();
    train_with_sampler(model, train, valid, cfg, |rng| rng.gen_range(0..n))
}

/// Share of target audio codes whose argmax under teacher forcing is correct.
pub fn teacher_forced_accuracy(model: &MultiScaleModel, seqs: &[PatchSequence]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for seq in seqs {
        let Some(range) = seq.target.clone() else { bail!(Input, "sequence without target") };
        let logits = model.logits(seq)?;
        let targets = seq.targets();
        for t in range.filter(|&t| matches!(seq.patches[t], Patch::Audio(_))) {
            for k in 0..seq.n_q {
                let row = logits.row(t * seq.n_q + k);
                let arg = argmax(row);
                hit += usize::from(arg == targets[t * seq.n_q + k] as usize);
                total += 1;
            }
        }
    }
    if total == 0 {
        bail!(Input, "no target codes to score");
    }
    Ok(hit as f64 / total as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Exact-match token accuracy of greedy (k = 1) generation: position-wise
/// agreement with the reference target; missing frames count as errors.
pub fn generation_accuracy(
    model: &MultiScaleModel,
    vocab: &Vocabulary,
    registry: &TemplateRegistry,
    examples: &[TaskExample],
) -> Result<f64> {
    let cfg = SamplingConfig { k: 1, max_patches: model.config().max_patches, ..SamplingConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in examples {
        let prefix = serialize_prefix(vocab, registry.get(ex.task)?, &ex.conditions)?;
        let out = generate(model, vocab, &prefix, &cfg, &mut rng)?;
        let want = ex.target.codes();
        let got = out.grid.codes();
        hit += want.iter().zip(got).filter(|(a, b)| a == b).count();
        total += want.len();
    }
    if total == 0 {
        bail!(Input, "no examples");
    }
    Ok(hit as f64 / total as f64)
}
