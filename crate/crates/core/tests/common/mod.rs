//! Checks shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniseq::baselines::{layout, Cell, LayoutKind};
use uniseq::codec::TokenGrid;
use uniseq::model::{ModelConfig, MultiScaleModel};
use uniseq::nn::Tensor;
use uniseq::task::{
    build_vocab, default_vocab_spec, parse_task, serialize_example, PatchSequence, Payload, SpanKind, TaskExample,
    TaskTemplate, TemplateRegistry, Vocabulary,
};

pub fn default_vocab() -> Vocabulary {
    build_vocab(&default_vocab_spec(3, 1024)).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, levels: usize, size: usize, frames: usize) -> TokenGrid {
    TokenGrid::new(levels, (0..frames * levels).map(|_| rng.gen_range(0..size as u32)).collect()).unwrap()
}

/// Random payloads of random length (empty allowed) for every slot.
pub fn random_example(rng: &mut ChaCha8Rng, vocab: &Vocabulary, template: &TaskTemplate) -> TaskExample {
    let (levels, size) = vocab.audio_shape().unwrap();
    let conditions = template
        .conditions
        .iter()
        .map(|slot| {
            let n = rng.gen_range(0..=12);
            match slot.span {
                SpanKind::Text => {
                    let dim = 8;
                    Payload::Continuous((0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect())
                }
                k if k.is_audio() => Payload::Audio(random_grid(rng, levels, size, n)),
                k => {
                    let range = vocab.range(k.range().unwrap()).unwrap().size as u32;
                    Payload::Discrete((0..n).map(|_| rng.gen_range(0..range)).collect())
                }
            }
        })
        .collect();
    let frames = rng.gen_range(1..=20);
    TaskExample { task: template.task, conditions, target: random_grid(rng, levels, size, frames) }
}

/// `(checked, failures)` of parse ∘ serialize over every template.
pub fn roundtrip(per_template: usize, seed: u64) -> (usize, usize) {
    let vocab = default_vocab();
    let registry = TemplateRegistry::default_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failed) = (0, 0);
    for template in registry.templates() {
        for _ in 0..per_template {
            let ex = random_example(&mut rng, &vocab, template);
            let ok = serialize_example(&vocab, &registry, &ex)
                .and_then(|seq| parse_task(&vocab, &registry, &seq))
                .is_ok_and(|back| back == ex);
            checked += 1;
            failed += usize::from(!ok);
        }
    }
    (checked, failed)
}

/// Whether `other` is emitted strictly before `cell`, read off the emission steps.
fn emitted_before(kind: LayoutKind, frames: usize, levels: usize, cell: Cell, other: Cell) -> bool {
    if kind == LayoutKind::Multiscale {
        // one patch per global step, codes inside a patch one local step each
        return (other.t, other.k) < (cell.t, cell.k);
    }
    let spec = layout(kind, frames, levels).unwrap();
    let step = |c: Cell| spec.steps.iter().position(|s| s.contains(&c)).unwrap();
    step(other) < step(cell)
}

/// Cells whose closed-form visible set differs from the brute-force one, over T, n_q ≤ `max`,
/// plus cells where the multi-scale relation differs from flattening.
pub fn layout_mismatches(max: usize) -> (usize, usize) {
    let (mut checked, mut bad) = (0, 0);
    for frames in 1..=max {
        for levels in 1..=max {
            let flat = layout(LayoutKind::Flatten, frames, levels).unwrap();
            for kind in LayoutKind::ALL {
                let spec = layout(kind, frames, levels).unwrap();
                for cell in spec.cells() {
                    let brute: Vec<Cell> = spec.cells().filter(|&o| emitted_before(kind, frames, levels, cell, o)).collect();
                    let got = spec.visible_set(cell).unwrap();
                    checked += 1;
                    bad += usize::from(got != brute);
                    if kind == LayoutKind::Multiscale {
                        bad += usize::from(got != flat.visible_set(cell).unwrap());
                    }
                }
            }
        }
    }
    (checked, bad)
}

pub fn tiny_config(n_q: usize) -> ModelConfig {
    ModelConfig {
        n_q,
        global_width: 16,
        global_layers: 2,
        global_heads: 2,
        global_ff: 32,
        local_width: 8,
        local_layers: 2,
        local_heads: 2,
        local_ff: 16,
        vocab_size: 64,
        continuous_dim: 4,
        max_patches: 16,
    }
}

/// Perturbs every input cell of random K×n_q sequences (K ≤ 4, n_q ≤ 3) and
/// records whether each logit row moved. A row must move exactly when the
/// perturbed cell lies in an earlier frame or earlier in the same frame.
/// Returns `(pairs checked, violations)`.
pub fn causality_violations(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut bad) = (0, 0);
    for n_q in 1..=3 {
        let model = MultiScaleModel::new(tiny_config(n_q), seed + n_q as u64).unwrap();
        for k_patches in 1..=4 {
            let ids: Vec<u32> = (0..k_patches * n_q).map(|_| rng.gen_range(0..64)).collect();
            let base = logits(&model, n_q, &ids);
            for src in 0..ids.len() {
                for shift in [1u32, 17, 40] {
                    let mut p = ids.clone();
                    p[src] = (p[src] + shift) % 64;
                    let moved = logits(&model, n_q, &p);
                    for row in 0..ids.len() {
                        let (t, k) = (row / n_q, row % n_q);
                        let (u, j) = (src / n_q, src % n_q);
                        let visible = u < t || (u == t && j < k);
                        let changed = moved.row(row) != base.row(row);
                        checked += 1;
                        bad += usize::from(visible != changed);
                    }
                }
            }
        }
    }
    (checked, bad)
}

fn logits(model: &MultiScaleModel, n_q: usize, ids: &[u32]) -> Tensor {
    model.logits(&PatchSequence::from_audio_ids(n_q, ids).unwrap()).unwrap()
}
