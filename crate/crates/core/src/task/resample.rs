use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Temperature-style task re-sampling: `p_i ∝ n_i^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResamplingConfig {
    pub counts: Vec<u64>,
    pub alpha: f64,
}

impl ResamplingConfig {
    pub fn new(counts: Vec<u64>, alpha: f64) -> Self {
        Self { counts, alpha }
    }

    /// Draws a task index according to [`resample_weights`].
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<usize> {
        let w = resample_weights(self)?;
        let dist = WeightedIndex::new(&w).map_err(|e| crate::error::Error::Config(format!("resampling weights: {e}")))?;
        Ok(dist.sample(rng))
    }
}

pub fn resample_weights(cfg: &ResamplingConfig) -> Result<Vec<f64>> {
    if cfg.counts.is_empty() {
        bail!(Config, "no task counts");
    }
    if let Some(i) = cfg.counts.iter().position(|&n| n == 0) {
        bail!(Config, "task {i} has zero examples");
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        bail!(Config, "alpha must be finite and non-negative, got {}", cfg.alpha);
    }
    // normalize in log space so large counts with α near 1 stay finite
    let logs: Vec<f64> = cfg.counts.iter().map(|&n| cfg.alpha * (n as f64).ln()).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / sum).collect())
}
