//! The JSON run configuration: one section per pipeline stage, every key optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uniseq::bench::{BenchConfig, SyntheticRule, SyntheticTaskSpec};
use uniseq::codec::CodecConfig;
use uniseq::inference::SamplingConfig;
use uniseq::model::ModelConfig;
use uniseq::task::{build_vocab, RangeSpec, Vocabulary};
use uniseq::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of codec training and model initialization.
    pub seed: u64,
    pub codec: CodecConfig,
    pub vocab: VocabSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SamplingConfig,
    pub bench: BenchConfig,
    /// Synthetic corpus used by `train`, `generate` and `inspect --example`.
    pub task: SyntheticTaskSpec,
    pub multitask: MultitaskSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            codec: CodecConfig::default(),
            vocab: VocabSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SamplingConfig::default(),
            bench: BenchConfig::default(),
            task: SyntheticTaskSpec::default(),
            multitask: MultitaskSection::default(),
        }
    }
}

/// Explicit range layout; empty means "the smallest layout hosting the task".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub ranges: Vec<RangeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultitaskSection {
    /// Task re-sampling exponent.
    pub alpha: f64,
    pub tasks: Vec<SyntheticTaskSpec>,
}

impl Default for MultitaskSection {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            tasks: vec![
                SyntheticTaskSpec::reference(SyntheticRule::TokenTts, 1),
                SyntheticTaskSpec::reference(SyntheticRule::Denoise, 2),
            ],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Every seed the run consumes.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
        self.bench.seed = seed;
    }

    pub fn task_vocab(&self, spec: &SyntheticTaskSpec) -> Result<Vocabulary, uniseq::error::Error> {
        if self.vocab.ranges.is_empty() {
            uniseq::bench::toy_vocab(spec.n_q, spec.codebook_size, spec.symbols)
        } else {
            build_vocab(&self.vocab.ranges)
        }
    }
}

/// `section.key = default` for every leaf of the default configuration.
pub fn documented_keys() -> String {
    let value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    let mut lines = Vec::new();
    walk("", &value, &mut lines);
    lines.join("\n")
}

fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                walk(&key, child, out);
            }
        }
        _ => out.push(format!("  {prefix} = {v}")),
    }
}
