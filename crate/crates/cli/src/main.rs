//! `pgnn`: batch driver for simulation, search, training, evaluation and
//! ICE analysis. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

mod commands;
mod config;
mod ranges;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use pgnn::analysis::{IceMode, IceVariable};
use pgnn::couplings::CouplingKind;
use serde::de::DeserializeOwned;

use config::{usage, FileConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "pgnn", version, about = "Process-guided neural network experiments")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = "PGNN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream [default: 0]
    #[arg(long, global = true, env = "PGNN_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for search and ICE [default: all cores]
    #[arg(long, global = true, env = "PGNN_THREADS")]
    pub threads: Option<usize>,
    /// Output directory [default: pgnn-out]
    #[arg(long, global = true, env = "PGNN_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sites as CSV.
    Simulate(SimulateArgs),
    /// Random search over architectures and hyperparameters for one kind.
    Search(SearchArgs),
    /// Train models per fold and write a bundle with metrics.
    Train(TrainArgs),
    /// Test-set MAE of a trained bundle.
    Evaluate(EvaluateArgs),
    /// ICE curves of a trained bundle over the seasonal windows.
    Ice(IceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Days per site [default: 1095]
    #[arg(long)]
    pub days: Option<usize>,
    /// Number of sites, alternating over the climate groups [default: 2]
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub start_year: Option<i32>,
    /// Amplitude of the residual added to process-model GPP
    #[arg(long)]
    pub residual_amplitude: Option<f64>,
    /// Observation noise standard deviation
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Scenario, split and training settings shared by `search` and `train`.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Site-day CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Coupling kinds, comma separated
    #[arg(long, value_delimiter = ',')]
    pub kind: Vec<CouplingKind>,
    /// on-site or multi-site
    #[arg(long, value_parser = kebab::<pgnn::experiments::Spatial>)]
    pub spatial: Option<pgnn::experiments::Spatial>,
    /// full or sparse
    #[arg(long, value_parser = kebab::<pgnn::experiments::Density>)]
    pub density: Option<pgnn::experiments::Density>,
    /// Temporal folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Index of the held-out site in the multi-site scenario
    #[arg(long)]
    pub test_site: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Candidates to evaluate
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Search candidates per kind before training (0: train as configured)
    #[arg(long)]
    pub budget: Option<usize>,
    /// Train the best candidate of an earlier `search` run
    #[arg(long)]
    pub search: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to these sites; with --year replaces the recorded test set
    #[arg(long)]
    pub site: Vec<String>,
    #[arg(long)]
    pub year: Vec<i32>,
    /// Permit evaluating on records the models were trained on
    #[arg(long)]
    pub allow_leakage: bool,
}

#[derive(Debug, Args)]
pub struct IceArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Variables to sweep [default: all five]
    #[arg(long, value_delimiter = ',')]
    pub variable: Vec<IceVariable>,
    /// resimulate or frozen-state
    #[arg(long)]
    pub mode: Option<IceMode>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Site to analyse [default: the first test site]
    #[arg(long)]
    pub site: Option<String>,
    /// Year whose seasonal windows are used [default: the test year]
    #[arg(long)]
    pub year: Option<i32>,
    /// Which fold's model of each kind to analyse
    #[arg(long)]
    pub fold: Option<usize>,
}

/// Global settings after merging flags, environment and config file.
pub struct Resolved {
    pub file: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("pgnn-out"));
    std::fs::create_dir_all(&out).map_err(|e| anyhow::anyhow!("creating {}: {e}", out.display()))?;
    Ok(Resolved { file, seed, out })
}

fn run(cli: &Cli) -> Result<()> {
    let r = resolve(cli)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&r, a),
        Command::Search(a) => commands::search(&r, a),
        Command::Train(a) => commands::train(&r, a),
        Command::Evaluate(a) => commands::evaluate(&r, a),
        Command::Ice(a) => commands::ice(&r, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
