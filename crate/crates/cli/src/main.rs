use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use copg_cli::{cmd_compare, cmd_diagnose, cmd_eval, cmd_train, load_spec, CliError};

#[derive(Parser)]
#[command(name = "copg", version, about = "On-policy policy-gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment spec.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics across seeds and algorithms.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "mean_episode_return")]
        metric: String,
        /// Plot-data CSV path.
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Per-sample gradient ratios after a few first-order steps.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-sample CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy-policy rollouts from a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let spec = load_spec(&config)?.resolve(seed, out)?;
            for line in cmd_train(&spec)? {
                println!("{line}");
            }
        }
        Command::Compare {
            runs,
            metric,
            out,
            window,
        } => {
            print!("{}", cmd_compare(&runs, &metric, &out, window)?);
        }
        Command::Diagnose {
            config,
            checkpoint,
            steps,
            seed,
            out,
        } => {
            let spec = load_spec(&config)?.resolve(seed, None)?;
            let report = cmd_diagnose(&spec, checkpoint.as_deref(), steps)?;
            print!("{}", report.render());
            if let Some(path) = out {
                std::fs::write(&path, report.samples_csv())
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
            seed,
        } => {
            let spec = load_spec(&config)?.resolve(seed, None)?;
            let (ret, cost) = cmd_eval(&spec, &checkpoint, episodes)?;
            println!("episodes {episodes} mean_return {ret:.6} mean_cost {cost:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("COPG_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
