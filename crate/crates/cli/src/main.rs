mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;

/// Hierarchical and shrinkage-based portfolio allocation.
#[derive(Debug, Parser)]
#[command(name = "crisp-alloc", version, about)]
pub struct Cli {
    /// Optional `key = value` file; flags take precedence over its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for experiments [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output format: csv, tsv or text [default: csv].
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Output file, or the results root for `experiment`.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate one portfolio and compare it with the direct solution.
    Allocate(AllocateArgs),
    /// Run a named experiment preset and write its tables.
    Experiment(ExperimentArgs),
    /// Direction-error trajectory over a γ grid.
    Trajectory(TrajectoryArgs),
    /// Search for the signal that maximises the diagonal direction error.
    WorstMu(WorstMuArgs),
    /// Generate a covariance (and optionally a signal) as headerless CSV.
    Gen(GenArgs),
}

/// Where the covariance and signal come from.
#[derive(Debug, Args, Clone, Default)]
pub struct UniverseArgs {
    /// Headerless N×N covariance CSV.
    #[arg(long, value_name = "FILE", conflicts_with = "regime")]
    pub cov: Option<PathBuf>,
    /// Headerless N×1 signal CSV.
    #[arg(long, value_name = "FILE", conflicts_with = "signal")]
    pub mu: Option<PathBuf>,
    /// Regime to generate, e.g. `block`, `block:0.9:0.15`, `factor:3`, `hedged`.
    #[arg(long)]
    pub regime: Option<String>,
    /// Signal to generate, e.g. `ones`, `gaussian:0.02:1`, `structural`.
    #[arg(long)]
    pub signal: Option<String>,
    /// Number of assets for a generated regime [default: 100].
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// one-over-n, hrp, cotton, hrp-mu, hsp, hrp-sigma-mu, crisp, crisp-stream,
    /// crisp-projected, markowitz, a1 or a2 [default: crisp].
    #[arg(long)]
    pub method: Option<String>,
    /// Shrinkage intensity in [0, 1] [default: 0.5].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// CRISP sweep budget [default: 100].
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// CRISP relative-change tolerance [default: 1e-8].
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub universe: UniverseArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Preset name.
    pub preset: String,
    /// Override the preset's trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Use full-scale trial counts and grids.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Built-in instance; `nonmonotone` is the four-asset counterexample.
    #[arg(long, conflicts_with_all = ["cov", "regime"])]
    pub example: Option<String>,
    /// Number of γ grid points [default: 21].
    #[arg(long)]
    pub points: Option<usize>,
    /// Sweeps for the finite-sweep column [default: 100].
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[command(flatten)]
    pub universe: UniverseArgs,
}

#[derive(Debug, Args)]
pub struct WorstMuArgs {
    /// Random restarts of the search [default: 32].
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    pub universe: UniverseArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Also write a generated signal to this file.
    #[arg(long, value_name = "FILE")]
    pub mu_out: Option<PathBuf>,
    #[command(flatten)]
    pub universe: UniverseArgs,
}

fn run(cli: Cli) -> Result<(), String> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = commands::Context::resolve(&cli, &cfg)?;
    match &cli.command {
        Command::Allocate(a) => commands::allocate(&ctx, &cfg, a),
        Command::Experiment(a) => commands::experiment(&ctx, &cfg, a),
        Command::Trajectory(a) => commands::trajectory(&ctx, &cfg, a),
        Command::WorstMu(a) => commands::worst_mu(&ctx, &cfg, a),
        Command::Gen(a) => commands::gen(&ctx, &cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
