use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Adversarial motion transformer: synthetic corpora, training, evaluation.
///
/// Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
/// 3 training divergence.
#[derive(Debug, Parser)]
#[command(name = "advmt", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic motion corpus
    Generate(GenerateArgs),
    /// Check a corpus or motion CSV for parse errors and bone-length drift
    Validate(ValidateArgs),
    /// Train the encoder and discriminator on a corpus
    Train(TrainArgs),
    /// Score checkpoints and the zero-velocity baseline on the test split
    Eval(EvalArgs),
    /// Continue a motion CSV with a trained encoder
    Predict(PredictArgs),
    /// Finite-difference check of every differentiable operation
    Gradcheck(GradcheckArgs),
}

/// Where a run writes and which seed it uses.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory; must be new or empty. Defaults to
    /// `runs/<timestamp>-seed<seed>-<command>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed and ADVMT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Corpus config JSON (or a run manifest of an earlier `generate`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    /// Frames per sequence after decimation.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub fps: Option<u32>,
    /// Comma-separated motion styles (walk, wave_arms, idle_sway).
    #[arg(long, value_delimiter = ',')]
    pub styles: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Corpus directory or a single motion CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Topology JSON for a single CSV; the bundled 17-joint skeleton when
    /// absent.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Largest allowed bone-length change across frames, in mm.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON (or a run manifest of an earlier `train`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_bone: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Encoder checkpoint; not needed with `--baseline-only`.
    #[arg(long, required_unless_present = "baseline_only")]
    pub checkpoint: Option<PathBuf>,
    /// Corpus directory; its test split is scored.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated horizons in ms.
    #[arg(long, default_value = "160,400,560,720,880,1000")]
    pub horizons: String,
    /// System name of `--checkpoint` in the report.
    #[arg(long, default_value = "model")]
    pub label: String,
    /// Score only the zero-velocity baseline.
    #[arg(long, conflicts_with_all = ["checkpoint", "ablate"])]
    pub baseline_only: bool,
    /// Extra variant as `<checkpoint>,<label>`; repeatable. Adds an
    /// ablation table to the outputs.
    #[arg(long, value_name = "CKPT,LABEL")]
    pub ablate: Vec<String>,
    /// Observed frames; taken from the checkpoint when one is given.
    #[arg(long, default_value_t = 50)]
    pub history_len: usize,
    #[arg(long, default_value_t = 25)]
    pub future_len: usize,
    #[arg(long, default_value_t = 5)]
    pub stride: usize,
    /// Rollout frames (1-based, inclusive) averaged for speed.csv.
    #[arg(long, default_value = "15-25")]
    pub speed_frames: String,
    /// Also render one SVG pose strip per action.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Motion CSV; its last `history_len` frames are observed.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub frames: usize,
    /// Output motion CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale the backward rule of this operation (negative control).
    #[arg(long, hide = true)]
    pub corrupt_op: Option<String>,
}
