use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Framing and quantizer geometry of the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    /// Sample rate f_s in Hz.
    pub sample_rate: u32,
    /// Samples per frame (downsampling factor S).
    pub hop: usize,
    /// Latent dimension L of one frame; at most `hop`.
    pub latent_dim: usize,
    /// RVQ levels n_q.
    pub levels: usize,
    /// Codebook size V per level.
    pub codebook_size: usize,
    /// Seed of the orthonormal framing transform.
    pub transform_seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, hop: 320, latent_dim: 320, levels: 3, codebook_size: 1024, transform_seed: 0 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.latent_dim == 0 || self.levels == 0 {
            bail!(Config, "sample rate, hop, latent dim and levels must be positive: {self:?}");
        }
        if self.codebook_size < 2 {
            bail!(Config, "codebook size must be at least 2, got {}", self.codebook_size);
        }
        if self.latent_dim > self.hop {
            bail!(Config, "latent dim {} exceeds hop {}; the framing transform needs orthonormal rows", self.latent_dim, self.hop);
        }
        Ok(())
    }

    /// Frames per second, f_s / S.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Tokens per second, (f_s / S) · n_q.
    pub fn token_rate(&self) -> f64 {
        self.frame_rate() * self.levels as f64
    }

    /// Exact integer frame rate when S divides f_s.
    pub fn frame_rate_exact(&self) -> Option<u64> {
        (self.sample_rate as usize % self.hop == 0).then(|| (self.sample_rate as usize / self.hop) as u64)
    }

    pub fn token_rate_exact(&self) -> Option<u64> {
        self.frame_rate_exact().map(|f| f * self.levels as u64)
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop
    }
}

/// Mono signal with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            bail!(Input, "audio signal is empty");
        }
        if let Some(i) = samples.iter().position(|s| !(-1.0..=1.0).contains(s)) {
            bail!(Input, "sample {i} = {} outside [-1, 1]", samples[i]);
        }
        if sample_rate == 0 {
            bail!(Input, "sample rate must be positive");
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// T frames of L-dimensional latent vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrames {
    dim: usize,
    data: Vec<f64>,
}

impl LatentFrames {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            bail!(Shape, "{} values do not form frames of dimension {dim}", data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(NonFinite, "latent frames");
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            bail!(Shape, "frame of dimension {} in a {dim}-dimensional set", r.len());
        }
        Self::new(dim, rows.concat())
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; frames * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub(crate) fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mse(&self, other: &LatentFrames) -> Result<f64> {
        if self.dim != other.dim || self.data.len() != other.data.len() {
            bail!(Shape, "comparing {}x{} frames with {}x{}", self.frames(), self.dim, other.frames(), other.dim);
        }
        let n = self.data.len().max(1) as f64;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }
}

/// Fixed orthonormal L×S projection standing in for a learned encoder/decoder pair.
#[derive(Debug, Clone)]
pub struct FrameTransform {
    hop: usize,
    dim: usize,
    /// L rows of length S, orthonormal.
    basis: Vec<f64>,
}

impl FrameTransform {
    pub fn new(config: &CodecConfig) -> Result<Self> {
        config.validate()?;
        let s = config.hop;
        let mut rng = ChaCha8Rng::seed_from_u64(config.transform_seed);
        let gauss = DMatrix::<f64>::from_fn(s, s, |_, _| StandardNormal.sample(&mut rng));
        let q = gauss.qr().q();
        let mut basis = Vec::with_capacity(config.latent_dim * s);
        for row in 0..config.latent_dim {
            basis.extend(q.column(row).iter());
        }
        Ok(Self { hop: s, dim: config.latent_dim, basis })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn analyze(&self, signal: &AudioSignal) -> Result<LatentFrames> {
        let x = signal.samples();
        if x.len() < self.hop {
            bail!(Input, "signal of {} samples is shorter than one hop of {}", x.len(), self.hop);
        }
        let frames = x.len() / self.hop;
        let mut out = LatentFrames::zeros(frames, self.dim);
        for t in 0..frames {
            let window = &x[t * self.hop..(t + 1) * self.hop];
            for (l, h) in out.frame_mut(t).iter_mut().enumerate() {
                *h = dot(&self.basis[l * self.hop..(l + 1) * self.hop], window);
            }
        }
        Ok(out)
    }

    /// Transpose of [`Self::analyze`]; output samples are clamped to [-1, 1].
    pub fn synthesize(&self, frames: &LatentFrames, sample_rate: u32) -> Result<AudioSignal> {
        if frames.dim() != self.dim {
            bail!(Shape, "frames of dimension {}, transform expects {}", frames.dim(), self.dim);
        }
        if frames.frames() == 0 {
            bail!(Input, "no frames to synthesize");
        }
        let mut x = vec![0.0; frames.frames() * self.hop];
        for (t, h) in frames.iter().enumerate() {
            let window = &mut x[t * self.hop..(t + 1) * self.hop];
            for (l, &coef) in h.iter().enumerate() {
                for (w, b) in window.iter_mut().zip(&self.basis[l * self.hop..(l + 1) * self.hop]) {
                    *w += coef * b;
                }
            }
        }
        x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        AudioSignal::new(x, sample_rate)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn analyze(signal: &AudioSignal, config: &CodecConfig) -> Result<LatentFrames> {
    FrameTransform::new(config)?.analyze(signal)
}

pub fn synthesize(frames: &LatentFrames, config: &CodecConfig) -> Result<AudioSignal> {
    FrameTransform::new(config)?.synthesize(frames, config.sample_rate)
}
