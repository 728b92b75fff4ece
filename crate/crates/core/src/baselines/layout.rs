//! Emission orders over the `T × n_q` grid and the visibility relation each induces.
//!
//! Cells are 0-based `(t, k)` internally; renderings are 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Flatten,
    CoarseFirst,
    Parallel,
    Delay,
    /// The global/local model: frame-major emission, same order as flattening.
    Multiscale,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 5] =
        [LayoutKind::Flatten, LayoutKind::CoarseFirst, LayoutKind::Parallel, LayoutKind::Delay, LayoutKind::Multiscale];
    pub const BASELINES: [LayoutKind; 4] = [LayoutKind::Flatten, LayoutKind::CoarseFirst, LayoutKind::Parallel, LayoutKind::Delay];

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Flatten => "flatten",
            LayoutKind::CoarseFirst => "coarse_first",
            LayoutKind::Parallel => "parallel",
            LayoutKind::Delay => "delay",
            LayoutKind::Multiscale => "multiscale",
        }
    }

    /// Whether one step co-emits a cell per level (one output head per level).
    pub fn is_parallel(self) -> bool {
        matches!(self, LayoutKind::Parallel | LayoutKind::Delay)
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match LayoutKind::ALL.into_iter().find(|k| k.name() == norm) {
            Some(k) => Ok(k),
            None => bail!(Config, "unknown layout `{s}` (expected flatten, coarse_first, parallel, delay or multiscale)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub t: usize,
    pub k: usize,
}

impl Cell {
    pub fn new(t: usize, k: usize) -> Self {
        Self { t, k }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutSpec {
    pub kind: LayoutKind,
    pub frames: usize,
    pub levels: usize,
    /// Cells co-emitted at each step.
    pub steps: Vec<Vec<Cell>>,
    /// `(step, level)` slots that carry the empty token (delay only).
    pub padding: Vec<(usize, usize)>,
    step_of: Vec<usize>,
}

pub fn layout(kind: LayoutKind, frames: usize, levels: usize) -> Result<LayoutSpec> {
    if frames == 0 || levels == 0 {
        bail!(Config, "layout needs T ≥ 1 and n_q ≥ 1, got T = {frames}, n_q = {levels}");
    }
    let (t_n, q_n) = (frames, levels);
    let steps: Vec<Vec<Cell>> = match kind {
        LayoutKind::Flatten | LayoutKind::Multiscale => {
            (0..t_n).flat_map(|t| (0..q_n).map(move |k| vec![Cell::new(t, k)])).collect()
        }
        LayoutKind::CoarseFirst => (0..q_n).flat_map(|k| (0..t_n).map(move |t| vec![Cell::new(t, k)])).collect(),
        LayoutKind::Parallel => (0..t_n).map(|t| (0..q_n).map(|k| Cell::new(t, k)).collect()).collect(),
        LayoutKind::Delay => (0..t_n + q_n - 1)
            .map(|s| (0..q_n).filter(|&k| s >= k && s - k < t_n).map(|k| Cell::new(s - k, k)).collect())
            .collect(),
    };
    let mut step_of = vec![usize::MAX; t_n * q_n];
    for (s, cells) in steps.iter().enumerate() {
        for c in cells {
            step_of[c.t * q_n + c.k] = s;
        }
    }
    let padding = if kind == LayoutKind::Delay {
        (0..steps.len()).flat_map(|s| (0..q_n).map(move |k| (s, k))).filter(|&(s, k)| s < k || s - k >= t_n).collect()
    } else {
        vec![]
    };
    Ok(LayoutSpec { kind, frames, levels, steps, padding, step_of })
}

pub fn layout_flatten(frames: usize, levels: usize) -> Result<LayoutSpec> {
    layout(LayoutKind::Flatten, frames, levels)
}

pub fn layout_coarse_first(frames: usize, levels: usize) -> Result<LayoutSpec> {
    layout(LayoutKind::CoarseFirst, frames, levels)
}

pub fn layout_parallel(frames: usize, levels: usize) -> Result<LayoutSpec> {
    layout(LayoutKind::Parallel, frames, levels)
}

pub fn layout_delay(frames: usize, levels: usize) -> Result<LayoutSpec> {
    layout(LayoutKind::Delay, frames, levels)
}

impl LayoutSpec {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Step at which `cell` is emitted.
    pub fn step_of(&self, cell: Cell) -> Result<usize> {
        self.check(cell)?;
        Ok(self.step_of[cell.t * self.levels + cell.k])
    }

    fn check(&self, cell: Cell) -> Result<()> {
        if cell.t >= self.frames || cell.k >= self.levels {
            bail!(OutOfRange, "cell ({}, {}) outside {}×{} grid", cell.t + 1, cell.k + 1, self.frames, self.levels);
        }
        Ok(())
    }

    /// Whether the prediction of `cell` may condition on `other` (closed form per layout).
    pub fn sees(&self, cell: Cell, other: Cell) -> bool {
        let (t, k, u, j) = (cell.t, cell.k, other.t, other.k);
        match self.kind {
            LayoutKind::Flatten | LayoutKind::Multiscale => u < t || (u == t && j < k),
            LayoutKind::CoarseFirst => j < k || (j == k && u < t),
            LayoutKind::Parallel => u < t,
            LayoutKind::Delay => u + j < t + k,
        }
    }

    /// Cells visible to `cell`, sorted frame-major.
    pub fn visible_set(&self, cell: Cell) -> Result<Vec<Cell>> {
        self.check(cell)?;
        Ok(self.cells().filter(|&o| self.sees(cell, o)).collect())
    }

    /// All cells frame-major.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.frames).flat_map(move |t| (0..self.levels).map(move |k| Cell::new(t, k)))
    }

    /// Step number (1-based) per cell, levels as rows, then for parallel
    /// layouts the padded step sequence with `0` marking empty slots.
    pub fn render(&self) -> String {
        let width = self.num_steps().to_string().len().max(2);
        let mut out = format!("{} T={} n_q={} steps={}\n", self.kind, self.frames, self.levels, self.num_steps());
        out.push_str(&format!("{:>5}", ""));
        for t in 0..self.frames {
            out.push_str(&format!(" {:>w$}", format!("t{}", t + 1), w = width + 1));
        }
        out.push('\n');
        for k in 0..self.levels {
            out.push_str(&format!("{:>5}", format!("k{}", k + 1)));
            for t in 0..self.frames {
                out.push_str(&format!(" {:>w$}", self.step_of[t * self.levels + k] + 1, w = width + 1));
            }
            out.push('\n');
        }
        if self.kind.is_parallel() {
            out.push_str("sequence (frame index per step, 0 = empty)\n");
            for k in 0..self.levels {
                out.push_str(&format!("{:>5}", format!("k{}", k + 1)));
                for cells in &self.steps {
                    let v = cells.iter().find(|c| c.k == k).map_or(0, |c| c.t + 1);
                    out.push_str(&format!(" {:>w$}", v, w = width + 1));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Score-matrix entries and sequence length of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionCost {
    pub entries: u64,
    pub length: u64,
}

/// Closed-form attention cost with `layers` layers (for multiscale, that many
/// global and that many local layers).
pub fn attention_cost(kind: LayoutKind, frames: usize, levels: usize, layers: usize) -> Result<AttentionCost> {
    if kind == LayoutKind::Multiscale {
        return multiscale_attention_cost(frames, levels, layers, layers);
    }
    if frames == 0 || levels == 0 || layers == 0 {
        bail!(Config, "attention cost needs positive T, n_q and layers");
    }
    let (t, q, l) = (frames as u64, levels as u64, layers as u64);
    let length = match kind {
        LayoutKind::Flatten | LayoutKind::CoarseFirst => t * q,
        LayoutKind::Parallel => t,
        LayoutKind::Delay => t + q - 1,
        LayoutKind::Multiscale => unreachable!(),
    };
    Ok(AttentionCost { entries: length * length * l, length })
}

/// `T²·L_global + T·n_q²·L_local`; the reported length is the patch count `T`.
pub fn multiscale_attention_cost(frames: usize, levels: usize, global_layers: usize, local_layers: usize) -> Result<AttentionCost> {
    if frames == 0 || levels == 0 || global_layers == 0 || local_layers == 0 {
        bail!(Config, "attention cost needs positive T, n_q and layers");
    }
    let (t, q) = (frames as u64, levels as u64);
    Ok(AttentionCost { entries: t * t * global_layers as u64 + t * q * q * local_layers as u64, length: t })
}
