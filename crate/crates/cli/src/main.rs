//! `piecer`: batch entry points for the pipeline.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error,
//! 3 gradient-check failure. Diagnostics go to stderr; artifact data goes to
//! files named by the config. Every command is deterministic given its
//! config, input files, and seed.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "piecer",
    version,
    about = "Knowledge-graph connection information for machine reading comprehension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config field before validation, e.g. --set synth.seed=9.
    /// Values parse as JSON, falling back to plain strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Fixture seed.
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train entity embeddings on a triple file and report filtered
    /// link-prediction quality.
    PretrainKge(ConfigArgs),
    /// Dump the joint query-passage graph for one text pair.
    BuildGraph(ConfigArgs),
    /// Generate a synthetic dataset plus its companion knowledge graph.
    GenData(ConfigArgs),
    /// Train the toy MRC model, optionally with plugged PIECER modules.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset and report EM/F1.
    Eval(ConfigArgs),
    /// Finite-difference checks of every PIECER submodule.
    Gradcheck(GradcheckArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::PretrainKge(args) => with_config(args, commands::pretrain_kge),
        Command::BuildGraph(args) => with_config(args, commands::build_graph),
        Command::GenData(args) => with_config(args, commands::gen_data),
        Command::Train(args) => with_config(args, commands::train),
        Command::Eval(args) => with_config(args, commands::eval),
        Command::Gradcheck(args) => {
            match commands::gradcheck(args.tolerance, args.seed, args.report.as_deref()) {
                Ok(code) => return code,
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_config<T: serde::de::DeserializeOwned>(
    args: ConfigArgs,
    command: fn(T, serde_json::Value) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let (cfg, effective) = config::load_config::<T>(&args.config, &args.sets)?;
    command(cfg, effective)
}
