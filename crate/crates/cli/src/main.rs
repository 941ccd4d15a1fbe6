use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmda::assimilation::Mode;
use qmda::error::{QmdaError, Result};
use qmda::pipeline::{cmd_evaluate, cmd_forecast, cmd_generate, cmd_train, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "qmda", version, about = "Quantum mechanical data assimilation from time series")]
struct Cli {
    /// TOML run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding `model/` and `runs/`.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate Lorenz 96 and write the train and test series.
    GenerateL96,
    /// Learn the basis and operators from the training series.
    Train,
    /// Run the forecast-analysis cycle on the test series.
    Forecast {
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Compute skill scores for a forecast run.
    Evaluate {
        #[arg(long)]
        mode: Option<Mode>,
        /// Run directory; defaults to the one the config would produce.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QmdaError::Config(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    match cli.command {
        Command::GenerateL96 => {
            let (train, test) = cmd_generate(&config)?;
            Ok(json!({ "train": train, "test": test }))
        }
        Command::Train => {
            let dir = cmd_train(&config, &cli.output)?;
            Ok(json!({ "model": dir }))
        }
        Command::Forecast { mode } => {
            if let Some(m) = mode {
                config.forecast.mode = m;
            }
            let dir = cmd_forecast(&config, &cli.output)?;
            Ok(json!({ "run": dir }))
        }
        Command::Evaluate { mode, run } => {
            if let Some(m) = mode {
                config.forecast.mode = m;
            }
            let (dir, curves) = cmd_evaluate(&config, &cli.output, run.as_deref())?;
            Ok(json!({ "run": dir, "nrmse_0": curves.nrmse[0], "ac_0": curves.ac[0] }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
