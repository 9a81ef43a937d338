//! `ssrecon` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod report;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ssrecon::LossMode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ssrecon::Error> for CliError {
    fn from(e: ssrecon::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "ssrecon", version, about = "Self-supervised parallel-network MRI reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom images.
    PhantomGen(PhantomGenArgs),
    /// Draw an undersampling mask and a pair of selection subsets.
    MakeMasks(MakeMasksArgs),
    /// Simulate undersampled acquisitions from phantoms.
    PrepareDataset(PrepareArgs),
    /// Train a reconstructor.
    Train(TrainArgs),
    /// Reconstruct every sample of a dataset.
    Reconstruct(ReconstructArgs),
    /// Score a checkpoint on a dataset with ground truth.
    Evaluate(EvaluateArgs),
    /// Tabulate evaluation reports.
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
pub struct PhantomGenArgs {
    /// Image side length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// shepp or blobs
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    /// JSON file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct MakeMasksArgs {
    /// Height (and width unless --width is given).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long)]
    pub sel_acs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subset_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct PrepareArgs {
    /// Phantom directory or manifest.
    #[arg(long)]
    pub phantoms: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reuse this parent mask instead of drawing one.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long)]
    pub acs: Option<usize>,
    #[arg(long)]
    pub sel_acs: Option<usize>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub subset_seed: Option<u64>,
    /// Skip this many phantoms.
    #[arg(long)]
    pub skip: Option<usize>,
    /// Use at most this many phantoms.
    #[arg(long)]
    pub take: Option<usize>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(rename = "paths.train")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    #[serde(rename = "paths.val")]
    pub val: Option<PathBuf>,
    #[arg(long)]
    #[serde(rename = "paths.out")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(rename = "max_epochs")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(rename = "base_lr")]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Number of unrolled phases.
    #[arg(long)]
    #[serde(rename = "K")]
    pub phases: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// parallel, parallel_no_diff, ssdu or supervised
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub share_params: bool,
    /// full or disjoint
    #[arg(long)]
    pub ssdu_loss_mask: Option<String>,
    #[arg(long)]
    pub resample_subsets_per_epoch: bool,
    #[arg(long)]
    #[serde(rename = "weights.alpha")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(rename = "weights.beta")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(rename = "weights.gamma")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(rename = "seeds.init1")]
    pub init_seed1: Option<u64>,
    #[arg(long)]
    #[serde(rename = "seeds.init2")]
    pub init_seed2: Option<u64>,
    #[arg(long)]
    #[serde(rename = "seeds.shuffle")]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    #[serde(rename = "seeds.subsets")]
    pub subset_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 1 or 2
    #[arg(long)]
    pub branch: Option<String>,
    /// Write 2xHxW complex images instead of magnitudes.
    #[arg(long)]
    pub complex: bool,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 1, 2 or both
    #[arg(long)]
    pub branch: Option<String>,
    /// Method name used by `report`.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Evaluation report JSON files.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the text table here.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Directory for per-sample |recon - reference| RTEN maps.
    #[arg(long)]
    pub error_maps: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PhantomGen(a) => commands::phantom_gen(a),
        Command::MakeMasks(a) => commands::make_masks(a),
        Command::PrepareDataset(a) => commands::prepare_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
