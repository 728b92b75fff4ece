//! Non-audio sub-sequences: phonemes, MIDI F0, semantic tokens and
//! word-level text embeddings. The text embedder and semantic features are
//! deterministic stand-ins for pretrained models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{bail, Result};

pub const DEFAULT_SEMANTIC_CLUSTERS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSeq {
    symbols: Vec<u32>,
    durations: Option<Vec<u32>>,
}

impl PhonemeSeq {
    pub fn new(symbols: Vec<u32>, durations: Option<Vec<u32>>) -> Result<Self> {
        if let Some(d) = &durations {
            if d.len() != symbols.len() {
                bail!(Input, "{} durations for {} phonemes", d.len(), symbols.len());
            }
            if let Some(i) = d.iter().position(|&x| x == 0) {
                bail!(Input, "phoneme {i} has zero duration");
            }
        }
        Ok(Self { symbols, durations })
    }

    pub fn with_durations(pairs: &[(u32, u32)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), Some(pairs.iter().map(|p| p.1).collect()))
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn durations(&self) -> Option<&[u32]> {
        self.durations.as_deref()
    }
}

/// Repeats every phoneme for its duration in frames.
pub fn expand_phoneme_durations(p: &PhonemeSeq) -> Result<Vec<u32>> {
    let Some(d) = p.durations() else {
        bail!(Input, "phoneme sequence carries no durations");
    };
    Ok(repeat_by(p.symbols(), d))
}

pub fn strip_durations(p: &PhonemeSeq) -> PhonemeSeq {
    PhonemeSeq { symbols: p.symbols.clone(), durations: None }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiSeq {
    notes: Vec<(u32, u32)>,
}

impl MidiSeq {
    /// Notes as `(f0 token, duration in frames)`.
    pub fn new(notes: Vec<(u32, u32)>) -> Result<Self> {
        if let Some(i) = notes.iter().position(|n| n.1 == 0) {
            bail!(Input, "MIDI note {i} has zero duration");
        }
        Ok(Self { notes })
    }

    pub fn notes(&self) -> &[(u32, u32)] {
        &self.notes
    }
}

/// Frame-level F0 sequence: every note's F0 token repeated for its duration.
pub fn flatten_midi(m: &MidiSeq) -> Result<Vec<u32>> {
    if let Some(i) = m.notes.iter().position(|n| n.1 == 0) {
        bail!(Input, "MIDI note {i} has zero duration");
    }
    let (f0, dur): (Vec<u32>, Vec<u32>) = m.notes.iter().copied().unzip();
    Ok(repeat_by(&f0, &dur))
}

fn repeat_by(symbols: &[u32], durations: &[u32]) -> Vec<u32> {
    symbols
        .iter()
        .zip(durations)
        .flat_map(|(&s, &d)| std::iter::repeat(s).take(d as usize))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticTokens {
    pub ids: Vec<u32>,
    pub clusters: usize,
}

/// Nearest-centroid id per feature frame (ties to the lowest index).
pub fn semantic_tokenize(features: &[Vec<f64>], centroids: &[Vec<f64>]) -> Result<SemanticTokens> {
    let Some(dim) = centroids.first().map(Vec::len) else {
        bail!(Input, "no centroids");
    };
    if centroids.iter().any(|c| c.len() != dim) {
        bail!(Shape, "ragged centroid table");
    }
    let mut ids = Vec::with_capacity(features.len());
    for (t, f) in features.iter().enumerate() {
        if f.len() != dim {
            bail!(Shape, "feature {t} has dimension {}, centroids {dim}", f.len());
        }
        let mut best = (0usize, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        ids.push(best.0 as u32);
    }
    Ok(SemanticTokens { ids, clusters: centroids.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Unit-norm vector for a word, derived from a SHA-256 of `(seed, word)`.
pub fn embed_word(word: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if word.is_empty() {
        bail!(Input, "empty word");
    }
    if dim == 0 {
        bail!(Config, "embedding dimension must be positive");
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn embed_text<S: AsRef<str>>(words: &[S], dim: usize, seed: u64) -> Result<TextEmbedding> {
    let vectors = words.iter().map(|w| embed_word(w.as_ref(), dim, seed)).collect::<Result<_>>()?;
    Ok(TextEmbedding { dim, vectors })
}

fn parse_pairs(text: &str, what: &str) -> Result<Vec<(u32, u32)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b] = fields[..] else {
            bail!(Format, "{what} line {}: expected two integers, got {line:?}", n + 1);
        };
        let parse = |s: &str| s.parse::<u32>().map_err(|_| crate::error::Error::Format(format!("{what} line {}: {s:?} is not an integer", n + 1)));
        out.push((parse(a)?, parse(b)?));
    }
    Ok(out)
}

/// Reads `SYMBOL DURATION` lines.
pub fn parse_phoneme_file(text: &str) -> Result<PhonemeSeq> {
    PhonemeSeq::with_durations(&parse_pairs(text, "phoneme")?)
}

/// Reads `F0 DURATION` lines.
pub fn parse_midi_file(text: &str) -> Result<MidiSeq> {
    MidiSeq::new(parse_pairs(text, "midi")?)
}
