//! Command-line entry point: solve model files, run benchmark experiments,
//! run verification checks.
//!
//! Exit codes: 0 success, 1 usage/IO/parse error, 2 not converged,
//! 3 solver failure, 4 check failure. Machine-readable output (JSON or
//! CSV) goes to stdout; diagnostics go to stderr.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use boxopt::auglag::AuglagConfig;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Solver settings shared by the subcommands; unset values fall back to
/// the library defaults.
#[derive(Debug, Clone, clap::Args)]
pub struct SolverFlags {
    /// Seed for all randomness (generators derive per-cell seeds from it).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format for bench records.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Stationarity tolerance of the box solver.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Constraint feasibility tolerance of the outer loop.
    #[arg(long = "feas-tol", global = true)]
    pub feas_tol: Option<f64>,
    /// Iteration cap of each inner box solve.
    #[arg(long = "max-iters", global = true)]
    pub max_iters: Option<usize>,
    /// Number of stored curvature pairs.
    #[arg(long, global = true)]
    pub memory: Option<usize>,
    /// Worker threads for independent benchmark cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

impl SolverFlags {
    pub fn auglag_config(&self) -> AuglagConfig {
        let mut cfg = AuglagConfig::default();
        if let Some(tol) = self.tol {
            cfg.inner.tol = tol;
        }
        if let Some(feas) = self.feas_tol {
            cfg.feas_tol = feas;
        }
        if let Some(iters) = self.max_iters {
            cfg.inner.max_iters = iters;
        }
        if let Some(memory) = self.memory {
            cfg.inner.memory_m = memory;
        }
        cfg
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct BenchFlags {
    /// Experiment family to run.
    #[arg(long)]
    pub experiment: String,
    /// Comma-separated sizes (scale t for nnls-*, point/sample counts or
    /// bin counts elsewhere).
    #[arg(long)]
    pub sizes: String,
    /// Repetitions per size.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Write per-(experiment, size) mean/stddev aggregates to this CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Feature dimension for synthetic svm/fairness data.
    #[arg(long, default_value_t = 4)]
    pub features: usize,
    /// RBF kernel bandwidth for dual-svm.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Dual box bound for dual-svm.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Regularization weight for joint-probability experiments.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Ridge weight for fairness experiments.
    #[arg(long = "lambda-reg", default_value_t = 1e-3)]
    pub lambda_reg: f64,
    /// External fairness data set (CSV) instead of the synthetic generator.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Zero-based column carrying the ±1 label in --csv.
    #[arg(long = "label-col")]
    pub label_col: Option<usize>,
    /// Zero-based column carrying the 0/1 group flag in --csv.
    #[arg(long = "group-col")]
    pub group_col: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, compile and solve a model file against a data manifest.
    Solve {
        /// Model file in the modeling language.
        #[arg(long)]
        model: PathBuf,
        /// JSON manifest binding parameters to DMAT1/CSV files or scalars.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a benchmark experiment family over a size list.
    Bench {
        #[command(flatten)]
        bench: BenchFlags,
    },
    /// Run oracle verification suites (gradients, two-loop, sinkhorn,
    /// working-set, or all).
    Check {
        /// Check target.
        target: String,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "boxopt",
    about = "Box-constrained quasi-Newton solver with an augmented Lagrangian layer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: SolverFlags,
}

/// CLI failures carrying their process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: String) -> Self {
        CliError { code, message }
    }

    /// Usage, IO, parse and data errors: exit 1.
    pub fn usage(message: String) -> Self {
        CliError::new(1, message)
    }

    pub fn from_usage(err: boxopt::Error) -> Self {
        CliError::new(1, err.to_string())
    }

    /// Irrecoverable solver-side failures: exit 3.
    pub fn solver(err: boxopt::Error) -> Self {
        CliError::new(3, err.to_string())
    }
}

fn run() -> Result<i32, CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap's default exit code is 2; the contract here is 1 for usage
        // errors and 0 for --help/--version.
        let code = if e.use_stderr() { 1 } else { 0 };
        CliError::new(code, e.to_string())
    })?;

    match &cli.command {
        Command::Solve { model, data } => commands::solve::run(model, data, &cli.flags),
        Command::Bench { bench } => commands::bench::run(&cli.flags, bench),
        Command::Check { target } => commands::check::run(target, cli.flags.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            if err.code == 0 {
                // --help / --version text goes to stdout per convention.
                println!("{}", err.message);
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", err.message.trim_end());
                ExitCode::from(err.code as u8)
            }
        }
    }
}
