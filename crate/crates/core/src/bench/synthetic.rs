//! Seeded toy corpora with a fully learnable condition → target rule.
//!
//! Every frame carries a symbol `s_t`; its target codes are `f(s_t, k)` for a
//! seeded per-level permutation table `f`. Token-TTS conditions on the symbol
//! string, denoise on the clean grid with a share of codes substituted (at most
//! one per frame, so the clean frame stays identifiable).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{LatentFrames, TokenGrid};
use crate::error::{bail, Result};
use crate::task::{
    build_vocab, serialize_example, to_patches, Payload, PatchSequence, RangeSpec, Task, TaskExample, TemplateRegistry,
    Vocabulary, AUDIO, PHONEME, SPECIAL, SPECIAL_BUDGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticRule {
    TokenTts,
    Denoise,
}

impl SyntheticRule {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticRule::TokenTts => "token-tts",
            SyntheticRule::Denoise => "denoise",
        }
    }

    /// The template each rule is written in.
    pub fn task(self) -> Task {
        match self {
            SyntheticRule::TokenTts => Task::Tts,
            SyntheticRule::Denoise => Task::Se,
        }
    }
}

impl std::fmt::Display for SyntheticRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub task: Task,
    pub rule: SyntheticRule,
    pub train: usize,
    pub eval: usize,
    pub frames: usize,
    pub n_q: usize,
    pub symbols: usize,
    pub codebook_size: usize,
    /// Share of target codes substituted in the denoise condition.
    pub corruption: f64,
    /// Seeds the permutation table; tasks sharing it share structure.
    pub table_seed: u64,
    pub seed: u64,
}

fn default_corruption() -> f64 {
    0.2
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self::reference(SyntheticRule::TokenTts, 0)
    }
}

impl SyntheticTaskSpec {
    /// 32 symbols, T = 16, n_q = 3, 2000 train / 200 eval.
    pub fn reference(rule: SyntheticRule, seed: u64) -> Self {
        Self {
            task: rule.task(),
            rule,
            train: 2000,
            eval: 200,
            frames: 16,
            n_q: 3,
            symbols: 32,
            codebook_size: 32,
            corruption: default_corruption(),
            table_seed: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != self.rule.task() {
            bail!(Config, "rule {} is written in the {} template, not {}", self.rule, self.rule.task(), self.task);
        }
        if self.frames == 0 || self.n_q == 0 || self.train == 0 {
            bail!(Config, "frames, n_q and train must be positive");
        }
        if self.symbols < 2 {
            bail!(Config, "need at least two symbols");
        }
        if self.symbols > self.codebook_size {
            bail!(OutOfRange, "alphabet of {} symbols exceeds codebook size {}", self.symbols, self.codebook_size);
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            bail!(Config, "corruption must lie in [0, 1], got {}", self.corruption);
        }
        if self.corrupted_codes() > self.frames {
            bail!(Config, "cannot substitute {} codes at one per frame in {} frames", self.corrupted_codes(), self.frames);
        }
        Ok(())
    }

    fn corrupted_codes(&self) -> usize {
        (self.corruption * (self.frames * self.n_q) as f64).round() as usize
    }

    /// `table[k][s]`: the level-`k` code of symbol `s`.
    pub fn table(&self) -> Vec<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.table_seed);
        (0..self.n_q)
            .map(|_| {
                let mut p: Vec<u32> = (0..self.codebook_size as u32).collect();
                p.shuffle(&mut rng);
                p.truncate(self.symbols);
                p
            })
            .collect()
    }
}

/// Smallest vocabulary hosting the synthetic tasks: specials, audio, phonemes.
pub fn toy_vocab(n_q: usize, codebook_size: usize, symbols: usize) -> Result<Vocabulary> {
    build_vocab(&[
        RangeSpec::new(SPECIAL, SPECIAL_BUDGET, 1),
        RangeSpec::new(AUDIO, codebook_size, n_q),
        RangeSpec::new(PHONEME, symbols, 1),
    ])
}

fn symbol_string<R: Rng>(spec: &SyntheticTaskSpec, rng: &mut R) -> Vec<u32> {
    // no immediate repeats: every symbol lasts exactly one frame, so the
    // duration-stripped string still has one symbol per frame
    let mut out: Vec<u32> = Vec::with_capacity(spec.frames);
    while out.len() < spec.frames {
        let s = rng.gen_range(0..spec.symbols as u32);
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

fn render(table: &[Vec<u32>], symbols: &[u32]) -> Result<TokenGrid> {
    let codes = symbols.iter().flat_map(|&s| table.iter().map(move |level| level[s as usize])).collect();
    TokenGrid::new(table.len(), codes)
}

fn make_example<R: Rng>(spec: &SyntheticTaskSpec, table: &[Vec<u32>], rng: &mut R) -> Result<TaskExample> {
    let symbols = symbol_string(spec, rng);
    let target = render(table, &symbols)?;
    let conditions = match spec.rule {
        SyntheticRule::TokenTts => vec![Payload::Discrete(symbols), Payload::Audio(TokenGrid::empty(spec.n_q))],
        SyntheticRule::Denoise => {
            let mut codes = target.codes().to_vec();
            let mut frames: Vec<usize> = (0..spec.frames).collect();
            frames.shuffle(rng);
            for &t in &frames[..spec.corrupted_codes()] {
                let k = rng.gen_range(0..spec.n_q);
                let cell = &mut codes[t * spec.n_q + k];
                let shift = rng.gen_range(1..spec.codebook_size as u32);
                *cell = (*cell + shift) % spec.codebook_size as u32;
            }
            vec![Payload::Audio(TokenGrid::new(spec.n_q, codes)?)]
        }
    };
    Ok(TaskExample { task: spec.task, conditions, target })
}

fn example_key(ex: &TaskExample) -> Vec<u32> {
    let mut key = Vec::new();
    for c in &ex.conditions {
        match c {
            Payload::Discrete(ids) => key.extend(ids),
            Payload::Audio(grid) => key.extend(grid.codes()),
            Payload::Continuous(_) => {}
        }
        key.push(u32::MAX);
    }
    key.extend(ex.target.codes());
    key
}

/// `(train, eval)`, disjoint as whole examples; identical for identical specs.
pub fn gen_synthetic_task(spec: &SyntheticTaskSpec, vocab: &Vocabulary) -> Result<(Vec<TaskExample>, Vec<TaskExample>)> {
    spec.validate()?;
    let (levels, size) = vocab.audio_shape()?;
    if (levels, size) != (spec.n_q, spec.codebook_size) {
        bail!(Config, "vocabulary audio is {levels}×{size}, spec {}×{}", spec.n_q, spec.codebook_size);
    }
    if spec.rule == SyntheticRule::TokenTts {
        let phones = vocab.range(PHONEME)?.size;
        if spec.symbols > phones {
            bail!(OutOfRange, "alphabet of {} symbols exceeds the {phones}-entry `{PHONEME}` range", spec.symbols);
        }
    }
    let table = spec.table();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let want = spec.train + spec.eval;
    let mut seen = HashSet::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while out.len() < want {
        attempts += 1;
        if attempts > 100 * want {
            bail!(Config, "example space too small for {want} distinct examples");
        }
        let ex = make_example(spec, &table, &mut rng)?;
        if seen.insert(example_key(&ex)) {
            out.push(ex);
        }
    }
    let eval = out.split_off(spec.train);
    Ok((out, eval))
}

/// Serializes and patches a corpus.
pub fn to_patch_sequences(
    vocab: &Vocabulary,
    registry: &TemplateRegistry,
    examples: &[TaskExample],
    n_q: usize,
    max_patches: usize,
) -> Result<Vec<PatchSequence>> {
    examples.iter().map(|ex| to_patches(&serialize_example(vocab, registry, ex)?, n_q, max_patches)).collect()
}

/// Frames drawn around `components` well-separated centres with unit noise.
pub fn gaussian_mixture(frames: usize, dim: usize, components: usize, spread: f64, seed: u64) -> Result<LatentFrames> {
    if frames == 0 || dim == 0 || components == 0 {
        bail!(Config, "frames, dim and components must be positive");
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        bail!(Config, "spread must be finite and non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centres: Vec<Vec<f64>> = (0..components).map(|_| (0..dim).map(|_| spread * unit.sample(&mut rng)).collect()).collect();
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        let c = &centres[rng.gen_range(0..components)];
        data.extend(c.iter().map(|m| m + unit.sample(&mut rng)));
    }
    LatentFrames::new(dim, data)
}
