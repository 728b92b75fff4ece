//! Residual vector quantization.
//!
//! Level k picks the codebook vector closest (L2) to what levels `< k`
//! left unexplained; the reconstruction of a frame is the sum of the
//! vectors picked at every level.

use super::transform::LatentFrames;
use crate::error::{bail, Result};

/// `levels` codebooks of `size` vectors of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    size: usize,
    dim: usize,
    books: Vec<Vec<f64>>,
}

impl CodebookSet {
    pub fn new(size: usize, dim: usize, books: Vec<Vec<f64>>) -> Result<Self> {
        if books.is_empty() || size == 0 || dim == 0 {
            bail!(Shape, "codebook set needs at least one level, one vector and one dimension");
        }
        for (k, b) in books.iter().enumerate() {
            if b.len() != size * dim {
                bail!(Shape, "level {k} holds {} values, expected {size}x{dim}", b.len());
            }
            if b.iter().any(|v| !v.is_finite()) {
                bail!(NonFinite, "codebook level {k}");
            }
        }
        Ok(Self { size, dim, books })
    }

    pub fn from_vectors(levels: &[Vec<Vec<f64>>]) -> Result<Self> {
        let size = levels.first().map_or(0, Vec::len);
        let dim = levels.first().and_then(|l| l.first()).map_or(0, Vec::len);
        if levels.iter().any(|l| l.len() != size || l.iter().any(|v| v.len() != dim)) {
            bail!(Shape, "ragged codebook levels");
        }
        Self::new(size, dim, levels.iter().map(|l| l.concat()).collect())
    }

    pub fn levels(&self) -> usize {
        self.books.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, level: usize, code: usize) -> &[f64] {
        &self.books[level][code * self.dim..(code + 1) * self.dim]
    }

    pub fn level_data(&self, level: usize) -> &[f64] {
        &self.books[level]
    }

    /// The first `levels` levels only.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.levels() {
            bail!(Config, "cannot keep {levels} of {} levels", self.levels());
        }
        Ok(Self { size: self.size, dim: self.dim, books: self.books[..levels].to_vec() })
    }
}

/// T×n_q matrix of codes, stored frame-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    levels: usize,
    codes: Vec<u32>,
}

impl TokenGrid {
    pub fn new(levels: usize, codes: Vec<u32>) -> Result<Self> {
        if levels == 0 {
            bail!(Shape, "token grid needs at least one level");
        }
        if codes.len() % levels != 0 {
            bail!(Shape, "{} codes do not fill frames of {levels} levels", codes.len());
        }
        Ok(Self { levels, codes })
    }

    pub fn from_frames(frames: &[Vec<u32>]) -> Result<Self> {
        let levels = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != levels) {
            bail!(Shape, "ragged token grid");
        }
        Self::new(levels, frames.concat())
    }

    pub fn empty(levels: usize) -> Self {
        Self { levels: levels.max(1), codes: Vec::new() }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn frames(&self) -> usize {
        self.codes.len() / self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, frame: usize, level: usize) -> u32 {
        self.codes[frame * self.levels + level]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.codes[t * self.levels..(t + 1) * self.levels]
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn check_range(&self, size: usize) -> Result<()> {
        if let Some(i) = self.codes.iter().position(|&c| c as usize >= size) {
            bail!(OutOfRange, "code {} at frame {} level {} not below {size}", self.codes[i], i / self.levels, i % self.levels);
        }
        Ok(())
    }

    /// Frame-major sequence: every frame's n_q codes are consecutive.
    pub fn flatten(&self) -> Vec<u32> {
        self.codes.clone()
    }

    pub fn unflatten(seq: &[u32], levels: usize) -> Result<Self> {
        if levels == 0 || seq.len() % levels != 0 {
            bail!(Shape, "sequence of {} tokens is not divisible by n_q = {levels}", seq.len());
        }
        Self::new(levels, seq.to_vec())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the row of `book` closest to `x`; ties resolve to the smallest index.
pub(crate) fn nearest(book: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, q) in book.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, q);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

pub fn rvq_encode(frames: &LatentFrames, books: &CodebookSet) -> Result<TokenGrid> {
    Ok(rvq_encode_with_residuals(frames, books)?.0)
}

/// Encodes and also reports, per frame, the residual norm after each level.
pub fn rvq_encode_with_residuals(frames: &LatentFrames, books: &CodebookSet) -> Result<(TokenGrid, Vec<Vec<f64>>)> {
    if frames.dim() != books.dim() {
        bail!(Shape, "frames of dimension {}, codebooks of dimension {}", frames.dim(), books.dim());
    }
    let n_q = books.levels();
    let mut codes = Vec::with_capacity(frames.frames() * n_q);
    let mut norms = Vec::with_capacity(frames.frames());
    let mut residual = vec![0.0; books.dim()];
    for h in frames.iter() {
        residual.copy_from_slice(h);
        let mut per_level = Vec::with_capacity(n_q);
        for k in 0..n_q {
            let (m, _) = nearest(books.level_data(k), books.dim(), &residual);
            for (r, q) in residual.iter_mut().zip(books.vector(k, m)) {
                *r -= q;
            }
            codes.push(m as u32);
            per_level.push(residual.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        norms.push(per_level);
    }
    Ok((TokenGrid::new(n_q, codes)?, norms))
}

pub fn rvq_decode(grid: &TokenGrid, books: &CodebookSet) -> Result<LatentFrames> {
    if grid.levels() > books.levels() {
        bail!(Shape, "grid has {} levels, codebooks only {}", grid.levels(), books.levels());
    }
    grid.check_range(books.size())?;
    let mut out = LatentFrames::zeros(grid.frames(), books.dim());
    for t in 0..grid.frames() {
        let dst = out.frame_mut(t);
        for (k, &code) in grid.frame(t).iter().enumerate() {
            for (a, b) in dst.iter_mut().zip(books.vector(k, code as usize)) {
                *a += b;
            }
        }
    }
    Ok(out)
}
