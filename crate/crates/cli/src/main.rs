use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatrisk::error::{Error, Result};
use heatrisk::fit::{Sensitivity, Strategy};
use heatrisk::metrics::WeightScheme;

mod commands;
mod manifest;
mod tables;

/// Small-area heat-mortality pipeline. Stages read and write directories.
#[derive(Debug, Parser)]
#[command(name = "heatrisk", version)]
struct Cli {
    /// Worker threads (default: available cores). 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit the heat model and draw from the posterior.
    Fit(FitArgs),
    /// Curves, MMT/MMP, burden metrics and exceedance probabilities.
    Metrics(MetricsArgs),
    /// Cantonal curves under both weighting schemes.
    Aggregate(AggregateArgs),
    /// Second-stage effect-modifier regression on the ERH draws.
    Modifiers(ModifiersArgs),
    /// Bundle all tables into one JSON document plus CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML); defaults to the 10 x 10 desk setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeasonalityPrior {
    Default,
    Loose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    EmpiricalBayes,
    Grid,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::EmpiricalBayes => Strategy::EmpiricalBayes,
            StrategyArg::Grid => Strategy::Grid,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, value_parser = parse_sensitivity)]
    pub sensitivity: Option<Sensitivity>,
    #[arg(long, value_enum)]
    pub seasonality_prior: Option<SeasonalityPrior>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// population | variance
    #[arg(long, default_value = "population", value_parser = parse_scheme)]
    pub scheme: WeightScheme,
    /// ERH exceedance threshold per 1,000 (default: mean of area medians).
    #[arg(long)]
    pub erh_threshold: Option<f64>,
    /// Cantonal heat-RR exceedance threshold (default: mean of canton medians).
    #[arg(long)]
    pub rr_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scheme of the written cantonal curves; both are compared.
    #[arg(long, default_value = "population", value_parser = parse_scheme)]
    pub scheme: WeightScheme,
}

#[derive(Debug, Args)]
pub struct ModifiersArgs {
    /// Dataset directory (modifiers.csv, graph.csv, cantons.csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `metrics`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Refit on this many ERH samples and pool.
    #[arg(long, conflicts_with = "median")]
    pub propagate: Option<usize>,
    /// Only fit the per-area median ERH.
    #[arg(long)]
    pub median: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub modifiers: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_sensitivity(s: &str) -> std::result::Result<Sensitivity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<WeightScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::input(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Aggregate(a) => commands::aggregate(&a),
        Command::Modifiers(a) => commands::modifiers(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
