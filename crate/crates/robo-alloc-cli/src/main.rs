//! Batch command-line front-end of the allocation engine.

mod commands;
mod error;
mod io;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Globals;
use error::CliError;
use io::Sink;

#[derive(Debug, Parser)]
#[command(name = "robo-alloc", version, about = "Regularized mean-variance allocation engine")]
struct Cli {
    /// Output file (written atomically); standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also print a human-readable report with values in percent.
    #[arg(long, global = true)]
    pretty: bool,
    /// Seed of every randomized step (fold shuffles, random restarts).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Solver tolerance (ADMM residuals and risk-tolerance calibration).
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate expected returns and covariance from a return panel (CSV `date,<assets>`).
    Estimate {
        #[arg(long)]
        returns: PathBuf,
        /// `uniform` or `ewma:<decay>`.
        #[arg(long, default_value = "uniform")]
        scheme: String,
    },
    /// Solve a mean-variance or rebalancing problem.
    Optimize {
        #[arg(long)]
        moments: PathBuf,
        #[arg(long)]
        problem: PathBuf,
    },
    /// Solve a rebalancing problem along a grid of one penalty magnitude (CSV output).
    Path {
        #[arg(long)]
        moments: PathBuf,
        #[arg(long)]
        problem: PathBuf,
        /// strategic_l1, strategic_l2, current_l1 or current_l2.
        #[arg(long)]
        param: String,
        /// `log:<from>:<to>:<points>` or `linear:<from>:<to>:<points>`.
        #[arg(long)]
        grid: String,
    },
    /// Select a ridge parameter on a regression panel (CSV `y,<regressors>`).
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        /// press, gcv or kfold.
        #[arg(long, default_value = "gcv")]
        method: String,
        #[arg(long, default_value = "log:1e-4:1e2:25")]
        grid: String,
        /// Number of folds for kfold.
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Turn grades into implied, view and blended expected returns.
    Views {
        #[arg(long)]
        moments: PathBuf,
        #[arg(long)]
        views: PathBuf,
        /// Also write moments with the blended returns for `optimize`.
        #[arg(long)]
        moments_out: Option<PathBuf>,
    },
    /// Hedging-portfolio decomposition of the unconstrained optimal weights.
    Stevens {
        #[arg(long)]
        moments: PathBuf,
        /// Risk tolerance; defaults to the fully-invested value.
        #[arg(long)]
        gamma: Option<f64>,
        /// Risk-free rate.
        #[arg(long, default_value_t = 0.0)]
        r: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(tol) = cli.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::input(format!("--tol must be positive, got {tol}")));
        }
    }
    let g = Globals { sink: Sink::new(cli.out), pretty: cli.pretty, seed: cli.seed, tol: cli.tol };
    match cli.command {
        Command::Estimate { returns, scheme } => commands::estimate(&g, &returns, &scheme),
        Command::Optimize { moments, problem } => commands::optimize(&g, &moments, &problem),
        Command::Path { moments, problem, param, grid } => commands::path(&g, &moments, &problem, &param, &grid),
        Command::Calibrate { data, method, grid, folds } => commands::calibrate(&g, &data, &method, &grid, folds),
        Command::Views { moments, views, moments_out } => commands::views(&g, &moments, &views, moments_out.as_deref()),
        Command::Stevens { moments, gamma, r } => commands::stevens(&g, &moments, gamma, r),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
