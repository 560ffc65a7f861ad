//! `convpsd`: unsupervised pretraining, supervised training, detection,
//! evaluation and filter export.
//!
//! Every option can also be set in a TOML file (`--config`) or through a
//! `CPSD_<OPTION>` environment variable; flags override the environment,
//! which overrides the file, which overrides the defaults.

mod commands;
mod common;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{detect, eval, export, synthetic, train_sup, train_unsup};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "convpsd", version, about = "Convolutional sparse-coding pedestrian detector")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, env = "CPSD_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (default: one per core)
    #[arg(long, global = true, env = "CPSD_THREADS")]
    threads: Option<usize>,
    /// Log filter, e.g. info, debug, convpsd=trace
    #[arg(long, global = true, env = "CPSD_LOG", default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    TrainUnsup(train_unsup::TrainUnsupArgs),
    TrainSup(train_sup::TrainSupArgs),
    Detect(detect::DetectArgs),
    Eval(eval::EvalArgs),
    ExportFilters(export::ExportArgs),
    MakeSynthetic(synthetic::SyntheticArgs),
}

fn resolved<C, A>(name: &str, file: Option<&toml::Table>, args: &A) -> Result<C, CliError>
where
    C: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let cfg: C = config::resolve(name, file, args)?;
    log::info!("{name} configuration:\n{}", config::render(&cfg));
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(config::read_file).transpose()?;
    let file = file.as_ref();
    if let Some(n) = config::threads(cli.threads, file)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::TrainUnsup(a) => train_unsup::run(&resolved("train-unsup", file, a)?),
        Command::TrainSup(a) => train_sup::run(&resolved("train-sup", file, a)?),
        Command::Detect(a) => detect::run(&resolved("detect", file, a)?),
        Command::Eval(a) => eval::run(&resolved("eval", file, a)?),
        Command::ExportFilters(a) => export::run(&resolved("export-filters", file, a)?),
        Command::MakeSynthetic(a) => synthetic::run(&resolved("make-synthetic", file, a)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
