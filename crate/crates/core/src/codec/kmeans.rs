use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rvq::{nearest, CodebookSet};
use super::transform::{CodecConfig, LatentFrames};
use crate::error::{bail, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k` rows of dimension `dim`.
    pub centroids: Vec<f64>,
    /// Mean squared error of the assignment at each iteration, in order.
    pub mse_history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding. An empty cluster is re-seeded
/// from the point currently farthest from its centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    if dim == 0 || points.len() % dim != 0 {
        bail!(Shape, "{} values are not points of dimension {dim}", points.len());
    }
    let n = points.len() / dim;
    if n < k {
        bail!(Input, "{n} points cannot train {k} centroids");
    }
    if iters == 0 {
        bail!(Config, "k-means needs at least one iteration");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = plus_plus_init(points, dim, k, &mut rng);

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let (m, d) = nearest(&centroids, dim, point(i));
            changed |= assign[i] != m;
            assign[i] = m;
            dist[i] = d;
        }
        history.push(dist.iter().sum::<f64>() / (n * dim) as f64);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            let dst = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *d = s / counts[c] as f64;
                }
            } else {
                let far = (0..n).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                dst.copy_from_slice(point(far));
                dist[far] = 0.0;
            }
        }
    }
    // final assignment against the last centroid update
    if history.len() == iters {
        let mse = (0..n).map(|i| nearest(&centroids, dim, point(i)).1).sum::<f64>() / (n * dim) as f64;
        history.push(mse);
    }
    Ok(KMeansResult { centroids, mse_history: history })
}

fn plus_plus_init<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // rounding can walk past the end; fall back to the last point with mass
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trains `config.levels` codebooks: level k is k-means over the residuals
/// left by levels `< k`.
pub fn train_codebooks(corpus: &[LatentFrames], config: &CodecConfig, iters: usize, seed: u64) -> Result<CodebookSet> {
    Ok(train_codebooks_with_history(corpus, config, iters, seed)?.0)
}

pub fn train_codebooks_with_history(
    corpus: &[LatentFrames],
    config: &CodecConfig,
    iters: usize,
    seed: u64,
) -> Result<(CodebookSet, Vec<Vec<f64>>)> {
    if config.levels == 0 || config.codebook_size < 2 {
        bail!(Config, "need at least one level and two codes per level");
    }
    let dim = config.latent_dim;
    if let Some(f) = corpus.iter().find(|f| f.dim() != dim) {
        bail!(Shape, "corpus frame dimension {} differs from latent dim {dim}", f.dim());
    }
    let mut residuals: Vec<f64> = corpus.iter().flat_map(|f| f.data().iter().copied()).collect();
    let n = residuals.len() / dim;
    if n < config.codebook_size {
        bail!(Input, "corpus of {n} frames is smaller than codebook size {}", config.codebook_size);
    }
    let mut books = Vec::with_capacity(config.levels);
    let mut histories = Vec::with_capacity(config.levels);
    for level in 0..config.levels {
        let level_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(level as u64 + 1));
        let result = kmeans(&residuals, dim, config.codebook_size, iters, level_seed)?;
        for r in residuals.chunks_exact_mut(dim) {
            let (m, _) = nearest(&result.centroids, dim, r);
            for (v, q) in r.iter_mut().zip(&result.centroids[m * dim..(m + 1) * dim]) {
                *v -= q;
            }
        }
        books.push(result.centroids);
        histories.push(result.mse_history);
    }
    Ok((CodebookSet::new(config.codebook_size, dim, books)?, histories))
}
