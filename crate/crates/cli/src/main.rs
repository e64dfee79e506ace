//! `sepspike` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Spiked separable covariance models: limiting laws, outlier predictions,
/// simulation, estimators and Monte Carlo experiments.
#[derive(Debug, Parser)]
#[command(name = "sepspike", version, propagate_version = true)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config document.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set p=300` or `--set model.n=400`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limiting spectral law: edge, density and Stieltjes transforms.
    Law(LawArgs),
    /// Predicted outlier locations, thresholds and labels for a model.
    Predict(PredictArgs),
    /// Simulate sample spectra (and overlaps) from a model.
    Sample(SampleArgs),
    /// Run the data-driven estimators on one draw or a data file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment and write its report.
    Experiment(ExperimentArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct LawArgs {
    #[command(flatten)]
    pub common: Common,
    /// Energy grid `lo:hi:steps`; defaults to (0, 1.05 lambda_+].
    #[arg(long, value_name = "LO:HI:STEPS")]
    pub grid: Option<String>,
    /// Imaginary part used for the density.
    #[arg(long, default_value_t = 1e-4)]
    pub eta: f64,
    /// Only report the right edge.
    #[arg(long)]
    pub edge_only: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Overlap predictions for these labels (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub overlap: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Master seed [env: SEPSPIKE_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entry law: `gaussian`, `uniform` or `student_t:<dof>`.
    #[arg(long)]
    pub law: Option<String>,
    /// Also draw the unspiked matrix from the same `X`.
    #[arg(long)]
    pub coupled: bool,
    /// Write overlaps of the first K population directions with the top K
    /// sample vectors.
    #[arg(long, value_name = "K")]
    pub overlaps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Read the data matrix `Y` (rows are variables, `Q = Y Y^T`) instead
    /// of simulating from the model.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Master seed for the simulated draw [env: SEPSPIKE_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold for the counting statistics.
    #[arg(long, conflicts_with = "calibrate")]
    pub omega: Option<f64>,
    /// Calibrate the threshold from N null resamples at level EPSILON.
    #[arg(long, num_args = 2, value_names = ["N", "EPSILON"])]
    pub calibrate: Vec<String>,
    /// Fraction of min(p, n) scanned by the counts.
    #[arg(long, default_value_t = sepspike::estimators::DEFAULT_SCAN_FRACTION)]
    pub scan_fraction: f64,
    /// Estimate (q, q_a, q_b).
    #[arg(long)]
    pub counts: bool,
    /// Adaptive spike estimates.
    #[arg(long)]
    pub adaptive: bool,
    /// Eigenvalue shrinkage (identity base spectra only).
    #[arg(long)]
    pub shrink: bool,
    /// Keep negative shrinkage increments.
    #[arg(long)]
    pub no_clip: bool,
    /// Number of top eigenvalues treated as spikes; defaults to the model's
    /// spike count, or to q when counts are estimated.
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Experiment kind.
    #[arg(value_parser = parse_kind)]
    pub kind: sepspike::harness::ExperimentKind,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed [env: SEPSPIKE_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance multiplier applied to the pass criteria.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TierArg {
    Fast,
    Paper,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "fast")]
    pub tier: TierArg,
    /// Multiplies every tolerance; 0 forces the Monte Carlo checks to fail.
    #[arg(long, default_value_t = 1.0)]
    pub tolerance_scale: f64,
    /// Master seed [env: SEPSPIKE_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run only these criteria (comma separated ids).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
}

fn parse_kind(s: &str) -> Result<sepspike::harness::ExperimentKind, String> {
    sepspike::harness::ExperimentKind::parse(s).map_err(|e| e.to_string())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SEPSPIKE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("SEPSPIKE_THREADS must be a positive integer, got \"{v}\""))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| commands::dispatch(&cli));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
