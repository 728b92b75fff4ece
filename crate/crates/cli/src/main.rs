mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Failure classes, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Unreadable, malformed or inconsistent inputs (exit 2).
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

/// Unified audio token sequences: codec, multi-scale model, generation and benchmarks.
#[derive(Debug, Parser)]
#[command(name = "uniseq", version)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed for every random choice of the run.
    #[arg(long, global = true, env = "UNISEQ_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit RVQ codebooks on WAV files.
    CodecTrain(CodecTrainArgs),
    /// WAV → token grid (UAG1).
    CodecEncode(CodecEncodeArgs),
    /// Token grid → WAV.
    CodecDecode(CodecDecodeArgs),
    /// Train the multi-scale model on the configured synthetic task.
    Train(TrainArgs),
    /// Sample a target grid from a trained model.
    Generate(GenerateArgs),
    /// Per-iteration time and attention cost of the compared architectures.
    Bench(BenchArgs),
    /// Joint vs single-task training on the configured synthetic tasks.
    Multitask(MultitaskArgs),
    /// Render a prediction layout, a token grid or a serialized example.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct CodecTrainArgs {
    /// Training audio (mono WAV at codec.sample_rate).
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Codebook file to write (UAC1).
    #[arg(long)]
    pub out: PathBuf,
    /// Lloyd iterations per level.
    #[arg(long, default_value_t = 25)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct CodecEncodeArgs {
    #[arg(long)]
    pub codebooks: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CodecDecodeArgs {
    #[arg(long)]
    pub codebooks: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Weights to write (UAW1); the config goes to a .json sidecar.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write the training report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Weights written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Token-TTS condition: one phone symbol per frame, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "input")]
    pub phones: Option<Vec<u32>>,
    /// Denoise condition: the degraded grid (UAG1).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Generated grid (UAG1).
    #[arg(long)]
    pub out: PathBuf,
    /// Also synthesize audio with these codebooks…
    #[arg(long, requires = "wav")]
    pub codebooks: Option<PathBuf>,
    /// …into this WAV file.
    #[arg(long, requires = "codebooks")]
    pub wav: Option<PathBuf>,
    /// Overrides sample.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Overrides sample.temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Overrides sample.max_patches.
    #[arg(long)]
    pub max_patches: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated architectures (flatten, coarse_first, parallel, delay, multiscale).
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<String>>,
    /// Frame counts.
    #[arg(long = "T", value_delimiter = ',')]
    pub frames: Option<Vec<usize>>,
    /// Codebook levels.
    #[arg(long = "nq", value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Timed iterations per cell (median reported).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Allow T above 256 and add the 20-second point T = 1000 to the default grid.
    #[arg(long)]
    pub long: bool,
}

#[derive(Debug, Args)]
pub struct MultitaskArgs {
    /// Overrides multitask.alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Overrides train.steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write the study report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("what").required(true).args(["layout", "grid", "example"])))]
pub struct InspectArgs {
    /// Layout to render (needs --T and --nq).
    #[arg(long, requires_all = ["frames", "levels"])]
    pub layout: Option<String>,
    #[arg(long = "T")]
    pub frames: Option<usize>,
    #[arg(long = "nq")]
    pub levels: Option<usize>,
    /// Token grid to print frame by frame.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Dump the n-th training example of the configured task, one token per line.
    #[arg(long)]
    pub example: Option<usize>,
}

fn command() -> clap::Command {
    Cli::command().after_help(format!(
        "Configuration keys (JSON sections; all optional) and their defaults:\n{}",
        config::documented_keys()
    ))
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string())).and_then(commands::run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uniseq: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }
}
