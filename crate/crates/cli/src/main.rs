//! `ppn`: enrollment, enhancement, data synthesis, training, evaluation and
//! benchmarking for the target-voice enhancer.

mod alloc;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[global_allocator]
static GLOBAL: alloc::CountingAllocator = alloc::CountingAllocator;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ppn", version, about = "Speaker-conditioned real-time speech enhancement")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Model preset.
    #[arg(long, global = true, default_value = "toy", value_parser = ["ppn512", "ppn1024", "toy"])]
    pub preset: String,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Enhancer look-ahead in milliseconds (a multiple of 10).
    #[arg(long, global = true, default_value_t = 30)]
    pub lookahead_ms: u32,
    /// Only 48000 is accepted.
    #[arg(long, global = true, default_value_t = 48_000)]
    pub sample_rate: u32,
    /// Model configuration override, e.g. `--set gru_units=96`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Compute a speaker embedding from enrollment audio.
    Enroll(EnrollArgs),
    /// Enhance a recording for an enrolled speaker.
    Enhance(EnhanceArgs),
    /// Synthesize a set of target/interferer/noise mixtures with a manifest.
    Mix(MixArgs),
    /// Train a speaker embedder on synthetic talkers.
    TrainEmbedder(TrainEmbedderArgs),
    /// Train an enhancer on synthetic mixtures.
    TrainEnhancer(TrainEnhancerArgs),
    /// Score enhanced mixtures from a manifest.
    Eval(EvalArgs),
    /// Measure streaming speed and allocations.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EnrollArgs {
    /// Enrollment WAV (mono, 48 kHz, at least 3 s).
    #[arg(long)]
    pub audio: PathBuf,
    /// Embedder weights.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Speaker embedding file.
    #[arg(long, required_unless_present = "identity")]
    pub embedding: Option<PathBuf>,
    /// Enhancer weights.
    #[arg(long, required_unless_present = "identity")]
    pub weights: Option<PathBuf>,
    /// Debug mode: unit gains, no comb filtering.
    #[arg(long, conflicts_with_all = ["embedding", "weights"])]
    pub identity: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MixArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// SNR/SIR distribution: `eval` or `train`.
    #[arg(long, default_value = "eval", value_parser = ["eval", "train"])]
    pub mix_preset: String,
    /// Fixed SNR in dB (needs --sir-db; overrides --mix-preset).
    #[arg(long, requires = "sir_db")]
    pub snr_db: Option<f64>,
    /// Fixed SIR in dB (needs --snr-db).
    #[arg(long, requires = "snr_db")]
    pub sir_db: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 3.0)]
    pub enrollment: f64,
    /// Synthetic talkers in the corpus.
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEmbedderArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEnhancerArgs {
    /// Embedder weights used to embed enrollments.
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Training mixtures (each is used once per talker).
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Manifest written by `ppn mix`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedder weights for enrollment and the similarity probe.
    #[arg(long)]
    pub embedder: PathBuf,
    /// Enhancer weights.
    #[arg(long, required_unless_present_any = ["oracle", "identity"])]
    pub weights: Option<PathBuf>,
    /// Apply the ideal gains computed from the clean target.
    #[arg(long, conflicts_with_all = ["weights", "identity"])]
    pub oracle: bool,
    /// Pass the mixture through unchanged.
    #[arg(long, conflicts_with = "weights")]
    pub identity: bool,
    #[arg(long)]
    pub report: PathBuf,
    /// Score only the first N manifest rows.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Enhancer weights; a seeded random model of --preset when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Timed audio in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Untimed warm-up in seconds (at least 1).
    #[arg(long, default_value_t = 1.0)]
    pub warmup: f64,
    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,
}

/// Exit status for a failed command.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ppn_core::Error>() {
            return match e {
                ppn_core::Error::Config(_) => 2,
                ppn_core::Error::Numeric(_) => 4,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
