//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dagger_rnn::policy::DEFAULT_ALPHA_MIN;
use dagger_rnn::training::DEFAULT_CLIP_NORM;
use dagger_rnn::{EncoderMode, Regime, TaskKind};

#[derive(Debug, Parser)]
#[command(
    name = "dagger-rnn",
    version,
    about = "Train tanh RNNs with teacher forcing or DAgger and measure compounding error"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint; optionally emit a compounding-error curve.
    Eval(EvalArgs),
    /// Compare backprop gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Copy,
    Reverse,
    DelayedEcho,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Copy => TaskKind::Copy,
            TaskArg::Reverse => TaskKind::Reverse,
            TaskArg::DelayedEcho => TaskKind::DelayedEcho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Teacher,
    Dagger,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Teacher => Regime::TeacherForcing,
            RegimeArg::Dagger => Regime::Dagger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Static,
    Rnn,
}

impl From<EncoderArg> for EncoderMode {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Static => EncoderMode::StaticStart,
            EncoderArg::Rnn => EncoderMode::EncodingRnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Teacher,
    Free,
    Both,
}

/// Clipping threshold; `none` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip(pub Option<f64>);

fn parse_clip(s: &str) -> Result<Clip, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Clip(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Clip(Some(v))),
        _ => Err(format!("expected a positive number or `none`, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub len: usize,
    /// Delay for delayed echo; ignored by the other tasks.
    #[arg(long, default_value_t = 0)]
    pub delay: usize,
    /// Token count including BOS.
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file (`x tokens<TAB>y tokens` per line).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub regime: RegimeArg,
    #[arg(long)]
    pub epochs: usize,
    /// Initial probability of feeding the true label.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Target alpha after `--epochs` decays; derives the decay factor.
    #[arg(long, conflicts_with = "p")]
    pub alpha_end: Option<f64>,
    /// Per-epoch decay factor.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ALPHA_MIN)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = Clip(Some(DEFAULT_CLIP_NORM)), value_parser = parse_clip)]
    pub clip: Clip,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = EncoderArg::Static)]
    pub encoder: EncoderArg,
    /// Do not feed the input token to the cell at each step.
    #[arg(long)]
    pub no_feed_inputs: bool,
    /// Vocabulary size for inputs and outputs; inferred from the data if absent.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Metrics file (JSON lines); standard output if absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record real per-epoch wall time (makes metrics non-reproducible).
    #[arg(long)]
    pub wall_time: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to report errors on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Comma-separated lengths for a free-running error curve on fresh data.
    #[arg(long, value_delimiter = ',')]
    pub curve: Option<Vec<usize>>,
    /// Task family for `--curve`.
    #[arg(long, value_enum, requires = "curve")]
    pub task: Option<TaskArg>,
    #[arg(long, default_value_t = 0)]
    pub delay: usize,
    /// Token count for `--curve` data; defaults to the model's output vocabulary.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Examples per curve length.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check a single seed instead of the five standard seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

impl std::fmt::Display for Clip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("none"),
        }
    }
}
