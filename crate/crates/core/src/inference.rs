//! Top-k temperature sampling and the two-level decode loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TokenGrid;
use crate::error::{bail, Error, Result};
use crate::model::MultiScaleModel;
use crate::task::{to_patches, Patch, SpanKind, TaskSequence, Vocabulary, DEFAULT_MAX_PATCHES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_patches: usize,
    /// Mask tokens that cannot occur at the current target position.
    pub constrained: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { k: 30, temperature: 0.8, seed: 0, max_patches: DEFAULT_MAX_PATCHES, constrained: true }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!(Config, "top-k needs k ≥ 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bail!(Config, "temperature must be positive, got {}", self.temperature);
        }
        if self.max_patches == 0 {
            bail!(Config, "max_patches must be positive");
        }
        Ok(())
    }
}

/// Kept candidates (sorted by index) and their probabilities.
fn truncated_softmax(logits: &[f64], allowed: Option<&[bool]>, k: usize, temperature: f64) -> Result<Vec<(usize, f64)>> {
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        bail!(NonFinite, "logit {i}");
    }
    let mut idx: Vec<usize> = match allowed {
        Some(a) => (0..logits.len()).filter(|&i| a[i]).collect(),
        None => (0..logits.len()).collect(),
    };
    if idx.is_empty() {
        bail!(Input, "no admissible token");
    }
    // stable sort keeps the lower index first among equal logits
    idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    idx.truncate(k);
    idx.sort_unstable();
    let scaled: Vec<f64> = idx.iter().map(|&i| logits[i] / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(idx.into_iter().zip(w).map(|(i, w)| (i, w / z)).collect())
}

/// Full-length sampling distribution: zero outside the top `k`.
pub fn top_k_probs(logits: &[f64], k: usize, temperature: f64) -> Result<Vec<f64>> {
    check_k(logits, k, temperature)?;
    let mut p = vec![0.0; logits.len()];
    for (i, q) in truncated_softmax(logits, None, k, temperature)? {
        p[i] = q;
    }
    Ok(p)
}

fn check_k(logits: &[f64], k: usize, temperature: f64) -> Result<()> {
    if k == 0 || k > logits.len() {
        bail!(Config, "k = {k} outside [1, {}]", logits.len());
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        bail!(Config, "temperature must be positive, got {temperature}");
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(cands: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, p) in cands {
        acc += p;
        if u < acc {
            return i;
        }
    }
    cands.iter().rev().find(|c| c.1 > 0.0).map_or(cands[0].0, |c| c.0)
}

pub fn top_k_sample<R: Rng + ?Sized>(logits: &[f64], cfg: &SamplingConfig, rng: &mut R) -> Result<usize> {
    check_k(logits, cfg.k, cfg.temperature)?;
    Ok(draw(&truncated_softmax(logits, None, cfg.k, cfg.temperature)?, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationStatus {
    /// `<audio_end>` was generated.
    Ended,
    /// The patch budget ran out first.
    LengthLimit,
    /// Unconstrained decoding produced a token that is not a valid code here.
    InvalidToken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub grid: TokenGrid,
    pub status: GenerationStatus,
}

/// Samples target frames after `prefix`, which must end with `<audio_start>`.
pub fn generate<R: Rng + ?Sized>(
    model: &MultiScaleModel,
    vocab: &Vocabulary,
    prefix: &TaskSequence,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    let mc = model.config();
    if mc.vocab_size != vocab.size() {
        bail!(Config, "model vocabulary {} differs from task vocabulary {}", mc.vocab_size, vocab.size());
    }
    if cfg.max_patches > mc.max_patches {
        bail!(Config, "max_patches {} exceeds the model context {}", cfg.max_patches, mc.max_patches);
    }
    let (levels, _) = vocab.audio_shape()?;
    if levels != mc.n_q {
        bail!(Config, "vocabulary has {levels} audio levels, model n_q = {}", mc.n_q);
    }
    let sp = vocab.specials();
    let audio_end = sp.span_end(SpanKind::Audio);
    let well_formed = prefix.tokens.first() == Some(&sp.start)
        && prefix.tokens.get(1).is_some_and(|&t| sp.task_of(t).is_some())
        && prefix.tokens.last() == Some(&sp.span_start(SpanKind::Audio));
    if !well_formed {
        bail!(Sequence, "prefix must start with <start> <task> and end with <audio_start>");
    }
    let mut seq = to_patches(prefix, mc.n_q, cfg.max_patches)?;
    let level_ids: Vec<std::ops::Range<u32>> = (0..levels).map(|k| vocab.audio_level_ids(k)).collect::<Result<_>>()?;
    let masks: Vec<Vec<bool>> = (0..levels)
        .map(|k| (0..vocab.size() as u32).map(|id| level_ids[k].contains(&id) || (k == 0 && id == audio_end)).collect())
        .collect();
    let start = seq.len();
    let mut codes = Vec::new();
    let status = loop {
        if seq.len() >= cfg.max_patches {
            break GenerationStatus::LengthLimit;
        }
        let ctx = model.next_context(&seq)?;
        let mut patch = Vec::with_capacity(levels);
        let mut verdict = None;
        for k in 0..levels {
            let logits = model.local_step(&ctx, &patch)?;
            let allowed = cfg.constrained.then_some(masks[k].as_slice());
            let id = draw(&truncated_softmax(&logits, allowed, cfg.k, cfg.temperature)?, rng) as u32;
            if k == 0 && id == audio_end {
                verdict = Some(GenerationStatus::Ended);
                break;
            }
            if !level_ids[k].contains(&id) {
                verdict = Some(GenerationStatus::InvalidToken);
                break;
            }
            patch.push(id);
        }
        if let Some(v) = verdict {
            if v == GenerationStatus::Ended {
                seq.patches.push(Patch::Repeated(audio_end));
            }
            break v;
        }
        codes.extend(patch.iter().map(|&id| vocab.lookup(id).map(|r| r.local)).collect::<Result<Vec<_>>>()?);
        seq.patches.push(Patch::Audio(patch));
    };
    debug_assert_eq!(codes.len() / levels, seq.len() - start - usize::from(status == GenerationStatus::Ended));
    let grid = TokenGrid::new(levels, codes).map_err(|e| Error::Sequence(format!("generated grid: {e}")))?;
    Ok(Generation { grid, status })
}
