use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spdcast_cli::{cmd_evaluate, cmd_ingest, cmd_portfolio, cmd_report, cmd_simulate, cmd_train_forecast, init_workers, Config};

/// Forecast realized covariance matrices and evaluate the forecasts.
#[derive(Parser)]
#[command(name = "spdcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "spdcast.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the configured value, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic series and daily returns.
    Simulate,
    /// Build realized covariances from intraday prices.
    Ingest,
    /// Rolling one-step-ahead forecasts for every configured model.
    TrainForecast,
    /// Loss tables, Model Confidence Sets, regime splits.
    Evaluate,
    /// Minimum-variance portfolio backtests.
    Portfolio,
    /// Markdown summary of the evaluation outputs.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate()?;
    init_workers(cfg.workers);
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::Simulate => println!("{}", cmd_simulate(&cfg)?.display()),
        Command::Ingest => println!("{}", cmd_ingest(&cfg)?.display()),
        Command::TrainForecast => {
            for p in cmd_train_forecast(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate => println!("{}", cmd_evaluate(&cfg)?.display()),
        Command::Portfolio => println!("{}", cmd_portfolio(&cfg)?.display()),
        Command::Report => println!("{}", cmd_report(&cfg)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPDCAST_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
