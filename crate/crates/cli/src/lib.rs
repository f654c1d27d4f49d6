//! Command-line front end: dataset creation, training, reconstruction,
//! generation, evaluation and latent-variance tracing.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lsdebm::models::ModelKind;

pub use config::{RunConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "lsdebm", version, about = "Latent-space diffusion energy-based models for binary volumes")]
pub struct Cli {
    /// Accepted for compatibility; every command already runs serially.
    #[arg(long, global = true)]
    pub serial: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate paired high-/low-quality volumes and a manifest.
    MakeData(MakeDataArgs),
    /// Train a model on the `*_hq.voxb` volumes of a directory.
    Train(TrainArgs),
    /// Reconstruct volumes with a trained model.
    Reconstruct(ReconstructArgs),
    /// Sample new volumes from a trained model.
    Generate(GenerateArgs),
    /// Compare predicted volumes against references.
    Eval(EvalArgs),
    /// Record latent variance along the inference trajectory.
    TraceLatent(TraceArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// `X,Y,Z`, `XxYxZ` or a single edge length. `Z = 1` produces 28x28
    /// 2D shapes degraded along y.
    #[arg(long, default_value = "32")]
    pub dims: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub slab: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A `.voxb` file or a directory of them; in a directory the
    /// `*_lq.voxb` files are used when present.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Diffusion depth (`lsdebm`) or posterior chain length (`lebm`).
    /// Defaults to `T` and the trained posterior chain length.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also write `trace.csv` with the latent variance per step.
    #[arg(long)]
    pub trace: bool,
    /// Chains per input for `--trace`.
    #[arg(long, default_value_t = 16)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Output volume shape; inferred for cubes and 2D squares.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub ref_dir: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// File-name suffix (before `.voxb`) selecting predictions.
    #[arg(long, default_value = "_pred")]
    pub pred_suffix: String,
    /// File-name suffix (before `.voxb`) selecting references.
    #[arg(long, default_value = "_hq")]
    pub ref_suffix: String,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A `.voxb` file or a directory of them (`*_lq.voxb` preferred).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub chains: usize,
    /// Inputs averaged per repeat (the first files in name order).
    #[arg(long, default_value_t = 4)]
    pub inputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeData(a) => commands::make_data(&a),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Eval(a) => commands::eval(&a).map(|_| ()),
        Command::TraceLatent(a) => commands::trace_latent(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage error, 2 runtime error.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                1
            } else {
                2
            }
        }
    }
}
