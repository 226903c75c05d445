//! `stdiff`: simulate, mask, train, impute, evaluate and report.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stdiff::Error;

#[derive(Debug, Parser)]
#[command(name = "stdiff", version, about = "State-transition diffusion imputation for control-driven time series")]
pub struct Cli {
    /// Key-value config file; flags take precedence over its entries.
    #[arg(long, global = true, env = "STDIFF_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a fully observed series from a synthetic plant.
    Simulate(SimulateArgs),
    /// Hide contiguous blocks of a series and record the hidden values.
    Mask(MaskArgs),
    /// Train a transition model on a (masked) series.
    Train(TrainArgs),
    /// Fill the gaps of a series.
    Impute(ImputeArgs),
    /// Score an imputed series against a ledger of hidden values.
    Eval(EvalArgs),
    /// Aggregate metric files into curves, a summary table and an SVG chart.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlantArg {
    Scalar,
    Nonlinear,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the channel-role file here.
    #[arg(long)]
    pub roles: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub plant: Option<PlantArg>,
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub roles: PathBuf,
    /// Masked CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Ledger of hidden values (`t,channel,true_value`).
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long, value_parser = ["20", "30", "40", "50"])]
    pub level: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub roles: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    pub output: PathBuf,
    /// Loss curve CSV.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Stdiff,
    Locf,
    Linear,
    Kalman,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full,
    HistoryOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FallbackArg {
    MaskZero,
    Locf,
    Linear,
    Kalman,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub roles: PathBuf,
    /// Completed CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Trained checkpoint (required for the stdiff method).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-gap diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Ledger used to add per-gap errors to the diagnostics.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reverse-diffusion samples per gap.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub covariate_fallback: Option<FallbackArg>,
    /// Impute gaps at the start of the series from the channel-mean state.
    #[arg(long)]
    pub anchor_leading: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Completed CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub roles: PathBuf,
    #[arg(long)]
    pub ledger: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Method label stored in the metrics file.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_parser = ["20", "30", "40", "50"])]
    pub level: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report errors in z-score units using the checkpoint's statistics.
    #[arg(long, requires = "checkpoint")]
    pub z_space: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric files written by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Parameter(_) | Error::Shape { .. } | Error::Contract(_) => "parameter",
        Error::Ingestion(_) | Error::Csv(_) => "ingestion",
        Error::Fit(_) | Error::Baseline(_) | Error::EmptyDataset => "data",
        Error::Generation(_) => "mask",
        Error::Coverage(_) => "coverage",
        Error::TrainingDiverged { .. } | Error::SamplingDiverged(_) => "numeric",
        Error::Checkpoint(_) | Error::Json(_) => "checkpoint",
        Error::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[config]: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", category(&e));
            ExitCode::from(1)
        }
    }
}
