//! `paleo-bhm`: simulate, fit, baseline, evaluate and validate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "paleo-bhm", version, about = "Bayesian hierarchical multiproxy temperature reconstruction")]
struct Cli {
    /// Worker threads for chain-level parallelism (falls back to PALEO_BHM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `model.sampler.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `model.sampler.n_chains`.
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a pseudo-proxy experiment and write its inputs and truth.
    Simulate(Common),
    /// Run the Gibbs sampler and write draws, a summary and a manifest.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Directory with the standard input file names; overrides `inputs`.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Fit the direct regression reconstruction.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Score reconstructions against a known truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Draw file written by `fit`.
        #[arg(long)]
        draws: PathBuf,
        /// `year,nh` truth series written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// `year,nh` series written by `baseline`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Geweke and simulation-based calibration checks of the sampler.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Check::All)]
        check: Check,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Geweke,
    Sbc,
    All,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("PALEO_BHM_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("PALEO_BHM_THREADS must be a positive integer, got `{s}`")),
        _ => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match thread_count(cli.threads) {
        Ok(Some(0)) | Err(_) => {
            eprintln!("error: thread count must be a positive integer");
            return ExitCode::from(EXIT_USAGE);
        }
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not configure the thread pool: {e}");
            }
        }
        Ok(None) => {}
    }
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Fit { common, data_dir } => commands::fit(&common, data_dir.as_deref()),
        Command::Baseline { common, data_dir } => commands::baseline(&common, data_dir.as_deref()),
        Command::Evaluate { common, draws, truth, baseline, data_dir } => {
            commands::evaluate(&common, &draws, &truth, baseline.as_deref(), data_dir.as_deref())
        }
        Command::Validate { common, check } => commands::validate(&common, check),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Checks(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(commands::Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA })
        }
    }
}
