//! Per-iteration training time and attention-cost counters for the
//! multi-scale model against the layout baselines at matched parameter budgets.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    attention_cost, baseline_train_step, match_param_budget, multiscale_attention_cost, BaselineConfig, LayoutKind,
    LayoutModel,
};
use crate::codec::TokenGrid;
use crate::error::{bail, Error, Result};
use crate::model::{train_step, LossMask, ModelConfig, MultiScaleModel};
use crate::nn::{AdamConfig, OptimizerState};
use crate::task::PatchSequence;

pub const CSV_HEADER: &str = "arch,T,n_q,ms_per_iter,attn_pairs,param_count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub archs: Vec<LayoutKind>,
    pub frames: Vec<usize>,
    pub levels: Vec<usize>,
    /// Codes per level.
    pub codebook_size: usize,
    pub global_width: usize,
    pub global_layers: usize,
    pub global_heads: usize,
    pub global_ff: usize,
    pub local_width: usize,
    pub local_layers: usize,
    pub local_heads: usize,
    pub local_ff: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Allowed relative parameter-count gap to the multi-scale model.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            archs: LayoutKind::ALL.to_vec(),
            frames: vec![64, 128, 256],
            levels: vec![3, 8],
            codebook_size: 32,
            global_width: 64,
            global_layers: 4,
            global_heads: 4,
            global_ff: 256,
            local_width: 32,
            local_layers: 2,
            local_heads: 2,
            local_ff: 128,
            warmup: 3,
            iters: 20,
            tolerance: 0.10,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.archs.is_empty() || self.frames.is_empty() || self.levels.is_empty() {
            bail!(Config, "archs, frames and levels must be non-empty");
        }
        if self.frames.contains(&0) || self.levels.contains(&0) {
            bail!(Config, "frames and levels must be positive");
        }
        if self.iters == 0 {
            bail!(Config, "need at least one timed iteration");
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            bail!(Config, "tolerance must lie in (0, 1)");
        }
        Ok(())
    }

    /// The multi-scale model at `(T, n_q)`; ids are `level·V + code`.
    pub fn multiscale_config(&self, frames: usize, levels: usize) -> ModelConfig {
        ModelConfig {
            n_q: levels,
            global_width: self.global_width,
            global_layers: self.global_layers,
            global_heads: self.global_heads,
            global_ff: self.global_ff,
            local_width: self.local_width,
            local_layers: self.local_layers,
            local_heads: self.local_heads,
            local_ff: self.local_ff,
            vocab_size: levels * self.codebook_size,
            continuous_dim: 1,
            max_patches: frames,
        }
    }

    /// Baseline sized to the multi-scale parameter count of the same cell.
    pub fn baseline_config(&self, kind: LayoutKind, frames: usize, levels: usize) -> Result<BaselineConfig> {
        let target = MultiScaleModel::new(self.multiscale_config(frames, levels), 0)?.param_count();
        let steps = crate::baselines::layout(kind, frames, levels)?.num_steps();
        let base = BaselineConfig {
            layout: kind,
            n_q: levels,
            codebook_size: self.codebook_size,
            width: self.global_width,
            layers: self.global_layers,
            heads: self.global_heads,
            ff: self.global_ff,
            max_steps: steps,
        };
        match_param_budget(&base, target, self.tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub arch: LayoutKind,
    pub frames: usize,
    pub levels: usize,
    pub ms_per_iter: f64,
    pub attn_pairs: u64,
    pub param_count: usize,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3},{},{}", self.arch, self.frames, self.levels, self.ms_per_iter, self.attn_pairs, self.param_count)
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Attention pairs and parameter count of one cell, without timing.
pub fn measure_cost(cfg: &BenchConfig, kind: LayoutKind, frames: usize, levels: usize) -> Result<(u64, usize)> {
    prepare_cell(cfg, kind, frames, levels).map(|c| (c.record.attn_pairs, c.record.param_count))
}

fn random_grid(frames: usize, levels: usize, size: usize, seed: u64) -> Result<TokenGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenGrid::new(levels, (0..frames * levels).map(|_| rng.gen_range(0..size as u32)).collect())
}

/// A model, its optimizer and batch, ready to take training steps.
struct PreparedCell {
    record: BenchRecord,
    step: Box<dyn FnMut() -> Result<()>>,
}

/// Builds one cell and checks its counted attention pairs against the closed form.
fn prepare_cell(cfg: &BenchConfig, kind: LayoutKind, frames: usize, levels: usize) -> Result<PreparedCell> {
    let grid = random_grid(frames, levels, cfg.codebook_size, cfg.seed ^ ((frames as u64) << 8) ^ levels as u64)?;
    let adam = AdamConfig::default();
    let (pairs, expected, params, step): (u64, u64, usize, Box<dyn FnMut() -> Result<()>>) = if kind == LayoutKind::Multiscale {
        let mc = cfg.multiscale_config(frames, levels);
        let mut model = MultiScaleModel::new(mc.clone(), cfg.seed)?;
        let v = cfg.codebook_size;
        let ids: Vec<u32> = grid.codes().iter().enumerate().map(|(i, &c)| ((i % levels) * v) as u32 + c).collect();
        let seq = PatchSequence::from_audio_ids(levels, &ids)?;
        let pairs = model.forward_activations(&seq)?.counters.attn_pairs;
        let expected = multiscale_attention_cost(frames, levels, mc.global_layers, mc.local_layers)?.entries;
        let params = model.param_count();
        let mut opt = OptimizerState::new(model.store(), adam);
        let batch = [seq];
        (pairs, expected, params, Box::new(move || train_step(&mut model, &mut opt, &batch, LossMask::All, usize::MAX).map(drop)))
    } else {
        let bc = cfg.baseline_config(kind, frames, levels)?;
        let mut model = LayoutModel::new(bc.clone(), cfg.seed)?;
        let (_, counters) = model.forward_loss(&grid)?;
        let expected = attention_cost(kind, frames, levels, bc.layers)?.entries;
        let params = model.param_count();
        let mut opt = OptimizerState::new(model.store(), adam);
        let batch = [grid];
        (counters.attn_pairs, expected, params, Box::new(move || baseline_train_step(&mut model, &mut opt, &batch).map(drop)))
    };
    if pairs != expected {
        return Err(Error::Shape(format!("{kind} at T={frames}, n_q={levels}: counted {pairs} attention pairs, closed form {expected}")));
    }
    let record = BenchRecord { arch: kind, frames, levels, ms_per_iter: 0.0, attn_pairs: pairs, param_count: params };
    Ok(PreparedCell { record, step })
}

/// Times the given `(arch, T, n_q)` cells one after another: each runs its
/// own training loop, warm-up steps first, and reports the median step time.
pub fn run_cells(cfg: &BenchConfig, cells: &[(LayoutKind, usize, usize)]) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cells.len());
    for &(kind, frames, levels) in cells {
        let mut cell = prepare_cell(cfg, kind, frames, levels)?;
        let reference = MultiScaleModel::new(cfg.multiscale_config(frames, levels), 0)?.param_count() as f64;
        let gap = (cell.record.param_count as f64 / reference - 1.0).abs();
        if gap > cfg.tolerance {
            bail!(Config, "{kind} at T={frames}, n_q={levels}: parameter gap {:.1}% exceeds tolerance", gap * 100.0);
        }
        for _ in 0..cfg.warmup {
            (cell.step)()?;
        }
        let mut ms = Vec::with_capacity(cfg.iters);
        for _ in 0..cfg.iters {
            let t0 = Instant::now();
            (cell.step)()?;
            ms.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        out.push(BenchRecord { ms_per_iter: median(ms), ..cell.record });
    }
    Ok(out)
}

/// Runs the full `archs × T × n_q` grid (see [`run_cells`]).
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut cells = Vec::new();
    for &levels in &cfg.levels {
        for &frames in &cfg.frames {
            cells.extend(cfg.archs.iter().map(|&kind| (kind, frames, levels)));
        }
    }
    run_cells(cfg, &cells)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_scaling_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        bail!(Shape, "{} x values, {} y values", xs.len(), ys.len());
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        bail!(Input, "scaling fit needs positive finite values");
    }
    let mut distinct: Vec<f64> = xs.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() == 1 {
        bail!(Input, "degenerate series: constant x");
    }
    if distinct.len() < 3 {
        bail!(Input, "need at least 3 distinct x values, got {}", distinct.len());
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Exponent of one arch's `attn_pairs` over T at fixed n_q.
pub fn records_exponent(records: &[BenchRecord], arch: LayoutKind, levels: usize) -> Result<f64> {
    let sel: Vec<&BenchRecord> = records.iter().filter(|r| r.arch == arch && r.levels == levels).collect();
    let xs: Vec<f64> = sel.iter().map(|r| r.frames as f64).collect();
    let ys: Vec<f64> = sel.iter().map(|r| r.attn_pairs as f64).collect();
    fit_scaling_exponent(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let xs = [64.0, 128.0, 256.0, 1000.0];
        let quad: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((fit_scaling_exponent(&xs, &quad).unwrap() - 2.0).abs() < 1e-9);
        assert!(fit_scaling_exponent(&xs, &[5.0; 4]).unwrap().abs() < 1e-12);
        assert!(fit_scaling_exponent(&[2.0; 3], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_scaling_exponent(&[1.0, 2.0], &[1.0, 4.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = BenchRecord { arch: LayoutKind::CoarseFirst, frames: 64, levels: 3, ms_per_iter: 1.5, attn_pairs: 9, param_count: 7 };
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "arch,T,n_q,ms_per_iter,attn_pairs,param_count\ncoarse_first,64,3,1.500,9,7\n");
    }
}
