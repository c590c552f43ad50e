//! stakeflow: fit, forecast and backtest the in-game stakes model.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;
mod output;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "stakeflow",
    version,
    about = "State-space modelling of in-game betting stakes"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Input dataset (raw or processed CSV).
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Model variant: baseline or varying.
    #[arg(long, global = true)]
    variant: Option<String>,

    /// Number of B-spline basis functions for time-varying effects.
    #[arg(long = "K", alias = "k", global = true)]
    k: Option<usize>,

    /// State-grid intervals.
    #[arg(long, global = true)]
    m: Option<usize>,

    /// Grid half-width in stationary standard deviations.
    #[arg(long = "span-sds", global = true)]
    span_sds: Option<f64>,

    /// Smoothing parameter(s) for the prewindiff effect: a value or a
    /// comma-separated grid.
    #[arg(long = "lambda-alpha", global = true)]
    lambda_alpha: Option<String>,

    /// Smoothing parameter(s) for the vaepdiff effect.
    #[arg(long = "lambda-beta", global = true)]
    lambda_beta: Option<String>,

    /// RNG seed (simulation, predictive sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Outlier-flag quantile for forecasts.
    #[arg(long, global = true)]
    quantile: Option<f64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Matches to simulate (simulate / recovery-study).
    #[arg(long = "n-matches", global = true)]
    n_matches: Option<usize>,

    /// Replications for recovery studies.
    #[arg(long, global = true)]
    replications: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw stakes CSV to processed dataset, descriptives and
    /// cross-correlation diagnostics.
    Ingest,
    /// Maximum-likelihood fit of the baseline or varying model.
    Fit,
    /// Smoothing-parameter grid search with the AIC table.
    Tune,
    /// One-step-ahead forecasts with outlier flags from a fitted model.
    Forecast {
        /// fit.json produced by `fit` or `tune`.
        #[arg(long = "fit-json")]
        fit_json: PathBuf,
    },
    /// Generate a synthetic dataset from a specified model.
    Simulate,
    /// Backtest the threshold betting strategy (needs the raw CSV so final
    /// scores are available).
    Backtest,
    /// Simulation-based parameter recovery report.
    RecoveryStudy,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(v) = &cli.variant {
        config.variant = v.clone();
    }
    if let Some(k) = cli.k {
        config.k = k;
    }
    if let Some(m) = cli.m {
        config.m = m;
    }
    if let Some(s) = cli.span_sds {
        config.span_sds = s;
    }
    if let Some(l) = &cli.lambda_alpha {
        config.lambda_alpha = config::parse_lambda_list(l)?;
    }
    if let Some(l) = &cli.lambda_beta {
        config.lambda_beta = config::parse_lambda_list(l)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(q) = cli.quantile {
        config.quantile = q;
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    if let Some(n) = cli.n_matches {
        config.n_matches = n;
    }
    if let Some(r) = cli.replications {
        config.replications = r;
    }
    Ok(config)
}

fn require_input(cli: &Cli) -> Result<PathBuf> {
    cli.input
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--input is required for this command"))
}

fn require_output(cli: &Cli) -> Result<PathBuf> {
    cli.output
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--output is required for this command"))
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| anyhow::anyhow!("cannot configure thread pool: {e}"))?;
    }
    let output = require_output(&cli)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&config, &require_input(&cli)?, &output),
        Command::Fit => commands::fit_cmd(&config, &require_input(&cli)?, &output),
        Command::Tune => commands::tune_cmd(&config, &require_input(&cli)?, &output),
        Command::Forecast { fit_json } => {
            commands::forecast_cmd(&config, &require_input(&cli)?, fit_json, &output)
        }
        Command::Simulate => commands::simulate_cmd(&config, &output),
        Command::Backtest => commands::backtest_cmd(&config, &require_input(&cli)?, &output),
        Command::RecoveryStudy => commands::recovery_cmd(&config, &output),
    }
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(lib_err) = cause.downcast_ref::<stakeflow::Error>() {
            return match lib_err {
                stakeflow::Error::Data(_) | stakeflow::Error::Csv(_) | stakeflow::Error::Io(_) => 2,
                stakeflow::Error::Numerical(_) => 3,
                stakeflow::Error::InvalidParameter(_)
                | stakeflow::Error::InvalidConfig(_)
                | stakeflow::Error::Domain(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage problems exit 1
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(err) = run(cli) {
        let kind = exit_code_for(&err);
        let report = serde_json::json!({
            "error": format!("{err:#}"),
            "exit_code": kind,
        });
        eprintln!("{report}");
        std::process::exit(kind);
    }
}
