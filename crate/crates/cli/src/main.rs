//! `mlcwm`: simulate, fit, select, predict, scenario, evaluate and
//! reproduce-sim over CSV files and a TOML run configuration.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mlcwm::inference::BMode;
use mlcwm::model::InitStrategy;

use config::ModelFlags;

#[derive(Parser)]
#[command(name = "mlcwm", version, about = "Multilevel logistic cluster-weighted models")]
struct Cli {
    /// Worker threads for independent starts and replicates (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw train/test CSVs and a ground-truth sidecar from a known model.
    Simulate(SimulateArgs),
    /// Multi-start fit at one C.
    Fit(ModelFlags),
    /// Fit every C in the grid and keep the lowest BIC.
    Select(ModelFlags),
    /// Mixture predictions with per-cluster decomposition.
    Predict(PredictArgs),
    /// Predictions at b = -sigma, 0, +sigma for every row.
    Scenario(FitDataArgs),
    /// Accuracy, AUC and ARI of a fit next to the GLM and GLMER baselines.
    Evaluate(EvaluateArgs),
    /// The full simulation protocol over several replicates.
    ReproduceSim(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Dgp {
    Table1,
    Analogue,
}

#[derive(Args)]
pub struct DgpArgs {
    /// Built-in generating model.
    #[arg(long, value_enum, default_value = "table1")]
    dgp: Dgp,
    /// JSON ground truth used instead of a built-in model.
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Rows in each test split.
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: u64,
}

#[derive(Args)]
pub struct FitDataArgs {
    /// Fitted model JSON.
    #[arg(long)]
    fit: PathBuf,
    /// CSV with the training schema (the response column is optional).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    io: FitDataArgs,
    /// minus-sigma, zero, plus-sigma or group-blup.
    #[arg(long, default_value = "group-blup")]
    b_mode: BMode,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    io: FitDataArgs,
    /// Held-out CSV scored at the training cutoff.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Ground-truth sidecar from `simulate`, for the ARI.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReproduceArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    #[arg(long, default_value_t = 20)]
    reps: u64,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    c: Vec<usize>,
    /// Replicate r draws data with seed + r.
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    #[arg(long, default_value = "random")]
    init: InitStrategy,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("MLCWM_LOG").init();
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    let manifest = match cli.command {
        Command::Simulate(a) => commands::simulate(&a)?,
        Command::Fit(f) => commands::fit(&f)?,
        Command::Select(f) => commands::select(&f)?,
        Command::Predict(a) => commands::predict(&a)?,
        Command::Scenario(a) => commands::scenario(&a)?,
        Command::Evaluate(a) => commands::evaluate(&a)?,
        Command::ReproduceSim(a) => commands::reproduce(&a)?,
    };
    println!("{}", manifest.display());
    Ok(())
}
