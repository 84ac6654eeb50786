use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dp_tune::harness::{cmd_simulate, cmd_test, cmd_train, with_workers, TrainingConfig};
use dp_tune::{Error, TuningParams};

#[derive(Parser)]
#[command(version, about = "Dynamic positioning controller tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for objective evaluation (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize gains and filter coefficients over the training scenarios.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of objective evaluations.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run the four-corner test with a parameter file.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
    },
    /// Run a single scenario and export its trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        /// `four-corner` or `episode:<n>:<wind direction deg>`.
        #[arg(long, default_value = "four-corner")]
        scenario: String,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn load_config(path: &Option<PathBuf>) -> dp_tune::Result<TrainingConfig> {
    path.as_deref().map_or_else(|| Ok(TrainingConfig::default()), TrainingConfig::load)
}

fn run(cli: Cli) -> dp_tune::Result<u8> {
    match cli.command {
        Command::Train { common, seed, budget } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(seed) = seed {
                cfg.cma.seed = seed;
            }
            if let Some(budget) = budget {
                cfg.cma.max_evaluations = budget;
            }
            let outcome = cmd_train(&cfg, &common.out, common.workers)?;
            println!("best_f = {}", outcome.result.best_f);
            Ok(0)
        }
        Command::Test { common, params } => {
            let cfg = load_config(&common.config)?;
            let params = TuningParams::load(&params)?;
            let report = with_workers(common.workers, || cmd_test(&params, &cfg, &common.out))??;
            print!("{}", report.summary());
            Ok(if report.diverged() { EXIT_DIVERGED } else { 0 })
        }
        Command::Simulate { common, params, scenario } => {
            let cfg = load_config(&common.config)?;
            let params = TuningParams::load(&params)?;
            let report = with_workers(common.workers, || cmd_simulate(&params, &cfg, &scenario, &common.out))??;
            print!("{}", report.summary());
            Ok(if report.diverged() { EXIT_DIVERGED } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::ParameterBounds { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::Divergence { .. } | Error::ControlSingularity { .. } => EXIT_DIVERGED,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
