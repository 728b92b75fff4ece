use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::task::DEFAULT_MAX_PATCHES;

/// Shapes of the global/local transformer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_q: usize,
    pub global_width: usize,
    pub global_layers: usize,
    pub global_heads: usize,
    pub global_ff: usize,
    pub local_width: usize,
    pub local_layers: usize,
    pub local_heads: usize,
    pub local_ff: usize,
    pub vocab_size: usize,
    pub continuous_dim: usize,
    pub max_patches: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_q: 3,
            global_width: 64,
            global_layers: 4,
            global_heads: 4,
            global_ff: 256,
            local_width: 64,
            local_layers: 2,
            local_heads: 4,
            local_ff: 256,
            vocab_size: 4212,
            continuous_dim: 16,
            max_patches: DEFAULT_MAX_PATCHES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            bail!(Config, "n_q must be positive");
        }
        for (what, width, heads) in
            [("global", self.global_width, self.global_heads), ("local", self.local_width, self.local_heads)]
        {
            if width == 0 || heads == 0 || width % heads != 0 {
                bail!(Config, "{what} width {width} not divisible by {heads} heads");
            }
        }
        if self.global_ff == 0 || self.local_ff == 0 {
            bail!(Config, "feed-forward widths must be positive");
        }
        if self.vocab_size < 2 || self.continuous_dim == 0 || self.max_patches == 0 {
            bail!(Config, "vocab_size ≥ 2, continuous_dim ≥ 1 and max_patches ≥ 1 required");
        }
        Ok(())
    }
}

/// Which positions contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Every position of every patch after `<start>`.
    #[default]
    All,
    /// Only the target frames and the closing `<audio_end>`.
    TargetOnly,
}
