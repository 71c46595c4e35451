use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecg_arrhythmia::nn::model::ArchKind;
use ecg_arrhythmia::LeadId;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(
    name = "ecg",
    version,
    about = "ECG arrhythmia pipeline: detection, rasterization, datasets, training, evaluation"
)]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    /// Seed for every random choice (balancing, splits, initialization, batch order).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file supplying flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Worker threads for fold-level parallelism (0 = one per core). Results
    /// do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Detect QRS complexes on one lead of a record.
    Detect(DetectArgs),
    /// Render a record to a 506x187 grayscale PNG.
    Rasterize(RasterizeArgs),
    /// Build and transform dataset manifests.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier on one cross-validation split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Run k-fold cross-validation.
    Cv(CvArgs),
    /// Render a report produced by `eval` or `cv`.
    Report(ReportArgs),
    /// Print bandpass coefficients and magnitude response.
    Filter(FilterArgs),
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Record stem, header (.json) or payload (.raw) path.
    #[arg(long = "in", value_name = "RECORD")]
    pub input: PathBuf,
    #[arg(long, default_value = "II")]
    pub lead: LeadId,
    /// Moving-integration window in samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: Option<u64>,
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RasterizeArgs {
    #[arg(long = "in", value_name = "RECORD")]
    pub input: PathBuf,
    /// Supersampling factor per axis before box downsampling.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=16))]
    pub supersample: u64,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Scan a directory of labelled records into a new manifest.
    Build {
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Keep the same number of records per class.
    Balance {
        #[arg(long, value_name = "JSON")]
        manifest: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Stratified test split plus cross-validation folds.
    Split {
        #[arg(long, value_name = "JSON")]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.2, value_parser = parse_fraction)]
        test_fraction: f64,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
        folds: u64,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Mark the records listed in a file (one id per line) as excluded.
    Exclude {
        #[arg(long, value_name = "JSON")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        ids: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// Model and optimizer settings shared by `train` and `cv`.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub arch: ArchKind,
    #[arg(long, value_name = "JSON")]
    pub manifest: PathBuf,
    /// Directory record paths in the manifest are relative to (default: the
    /// manifest's directory).
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Append lead-II QRS features before the classifier head.
    #[arg(long)]
    pub with_qrs_features: bool,
    /// Samples per lead fed to 1-D models (truncate or zero-pad).
    #[arg(long, value_parser = clap::value_parser!(u64).range(8..))]
    pub input_len: Option<u64>,
    /// Convolution filters per layer.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub filters: Option<u64>,
    /// Recurrent layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    pub lr: f64,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 5)]
    pub plateau_patience: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fold held out for validation.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Checkpoint stem; writes <out>.json, <out>.params and <out>.history.csv.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitName {
    Test,
    TrainVal,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for per-fold reports, histories and the summary.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
    Png,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long = "in", value_name = "JSON")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    /// Output file; required for png, stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 500.0, value_parser = parse_positive)]
    pub fs: f64,
    #[arg(long, default_value_t = 5.0, value_parser = parse_positive)]
    pub low: f64,
    #[arg(long, default_value_t = 15.0, value_parser = parse_positive)]
    pub high: f64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=8))]
    pub order: u64,
    /// Number of response points between 0 and Nyquist.
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
