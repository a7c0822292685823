//! Command-line entry point wiring ingestion, fitting, prediction, risk
//! analysis, and simulation into reproducible, config-driven runs.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 sampler error,
//! 5 I/O error.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use panelprobit::error::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "panelprobit", version, about = "Hierarchical probit panel models with risk-group analysis")]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores). Never affects
    /// outputs: all randomness is keyed per entity.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model and persist the chain draws.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export per-occasion predictive summaries for the holdout period.
    Predict {
        #[arg(long)]
        config: PathBuf,
    },
    /// Produce calibration tables, wrong-bin matrices, interval and
    /// flagging exports for the configured risk-group schemes.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the interval-width simulation studies.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convergence report for stored chain draws.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Csv(_) => 3,
        Error::Domain(_) | Error::Sampler(_) => 4,
        Error::Io(_) => 5,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Fit { config } => pipeline::cmd_fit(&RunConfig::load(config)?),
        Command::Predict { config } => pipeline::cmd_predict(&RunConfig::load(config)?),
        Command::Analyze { config } => pipeline::cmd_analyze(&RunConfig::load(config)?),
        Command::Simulate { config } => pipeline::cmd_simulate(&RunConfig::load(config)?),
        Command::Diagnose { chain, meta, out } => {
            pipeline::cmd_diagnose(chain, meta, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cli.threads > 0 {
        builder = builder.num_threads(cli.threads);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
