use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use ruin_cli::run::{run_simulate, run_solve, run_sweep, run_validate, Axis, SolveFlags};
use ruin_cli::{load_config, CliError, WORKERS_ENV};

/// Optimal dynamic proportional reinsurance over a finite horizon: solve the
/// survival value function, simulate policies and validate the results.
#[derive(Parser)]
#[command(name = "ruinctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the value function and optimal retention on the grid.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a checkpoint segment every N time slices.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<usize>,
        /// Resume from a directory of checkpoint segments.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Estimate survival probabilities by Monte Carlo.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every simulated path's events.
        #[arg(long)]
        dump_paths: bool,
    },
    /// Run the validation suite; exits with status 1 if any check fails.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve once per value of one model parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Eta,
    P,
    Horizon,
    #[value(name = "claim_mean")]
    ClaimMean,
    #[value(name = "hazard_rate")]
    HazardRate,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Eta => Axis::Eta,
            AxisArg::P => Axis::P,
            AxisArg::Horizon => Axis::Horizon,
            AxisArg::ClaimMean => Axis::ClaimMean,
            AxisArg::HazardRate => Axis::HazardRate,
        }
    }
}

const EXIT_VALIDATION_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn execute(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Solve { config, out, checkpoint_every, resume } => {
            let cfg = load_config(&config)?;
            let out = cfg.output_dir(out.as_deref())?;
            run_solve(&cfg, &out, &SolveFlags { checkpoint_every, resume })?;
            Ok(true)
        }
        Command::Simulate { config, out, dump_paths } => {
            let cfg = load_config(&config)?;
            let out = cfg.output_dir(out.as_deref())?;
            run_simulate(&cfg, &out, dump_paths)?;
            Ok(true)
        }
        Command::Validate { config, out } => {
            let cfg = load_config(&config)?;
            let out = cfg.output_dir(out.as_deref())?;
            run_validate(&cfg, &out)
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = load_config(&config)?;
            let out = cfg.output_dir(out.as_deref())?;
            run_sweep(&cfg, axis.into(), &values, &out)?;
            Ok(true)
        }
    }
}

fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = worker_pool().and_then(|pool| pool.install(|| execute(cli.command)));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("validation failed");
            ExitCode::from(EXIT_VALIDATION_FAILED)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
