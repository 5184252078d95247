use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stericpb::config::{Mode, RunConfig};
use stericpb::{pipeline, Error, Result};

/// Steric and classical Poisson-Boltzmann solver on a uniform grid.
#[derive(Debug, Parser)]
#[command(name = "stericpb", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for grid sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override the Newton tolerance on the residual max norm.
    #[arg(long, global = true, value_name = "X")]
    tol: Option<f64>,
    /// Solve the classical equation instead of the steric one.
    #[arg(long, global = true)]
    classical: bool,
    /// Evaluate the steric closure directly instead of through the table.
    #[arg(long, global = true)]
    no_table: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and print the report.
    Solve,
    /// Manufactured-solution convergence study.
    Mms {
        /// Grid spacings in Å (default: from the config, else 0.4 and 0.2).
        #[arg(long, value_delimiter = ',')]
        spacings: Option<Vec<f64>>,
    },
    /// Build the closure table and write it to a file.
    Table {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
    /// Print the extremes of the truncation bounds.
    Bounds,
    /// Print the resolved configuration.
    Info,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = cli.tol {
        cfg.solver.tol = t;
    }
    if cli.classical {
        cfg.mode = Mode::Classical;
    }
    if cli.no_table {
        cfg.table.enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let cfg = load(cli)?;
    match &cli.command {
        Command::Solve => Ok(pipeline::run_solve(&cfg)?.report.render()),
        Command::Mms { spacings } => Ok(pipeline::run_mms(&cfg, spacings.as_deref())?.render()),
        Command::Table { output } => {
            let table = pipeline::run_table_dump(&cfg, output)?;
            let (lo, hi) = table.range();
            Ok(format!("wrote {} nodes on [{lo:.4}, {hi:.4}] to {}\n", table.nodes().len(), output.display()))
        }
        Command::Bounds => Ok(pipeline::run_bounds(&cfg)?.render()),
        Command::Info => pipeline::info(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
