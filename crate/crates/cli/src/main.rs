//! `scaleshape`: solve entropy-regularized least-squares problems, print their
//! certificates and sensitivities, sweep λ, and run the UEG experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scaleshape::{EtaSchedule, SolverConfig};

/// Exit code for runs that finished without error but did not all converge.
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "scaleshape", version, about = "Scale-shape dual Newton solver for entropy-regularized least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a problem file.
    Solve(SolveArgs),
    /// Print the level-set bounds and the global rate certificate.
    Certificates(CertificateArgs),
    /// Jacobians of the solution map at the solution.
    Sensitivity(SensitivityArgs),
    /// Solve along a log-spaced λ grid and write the path as CSV.
    SweepLambda(SweepArgs),
    /// Write a synthetic UEG problem file.
    GenProblem(GenArgs),
    /// Run one of the UEG experiments and write its CSV and SVG outputs.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
struct SolverFlags {
    /// Armijo parameter.
    #[arg(long, default_value_t = 0.49)]
    mu: f64,
    /// Backtracking factor.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Tolerance on ‖F‖ (gradient norm for the classical method).
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Forcing schedule: exact, const:<c> or power:<p>.
    #[arg(long, default_value = "exact")]
    eta: EtaSchedule,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            gamma: self.gamma,
            eps: self.eps,
            max_iter: self.max_iter,
            eta_schedule: self.eta,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    ScaleShape,
    Classical,
}

#[derive(Debug, Args)]
struct SolveArgs {
    problem: PathBuf,
    /// Override the problem's λ.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Initial scale.
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    /// Hold the scale fixed at this value.
    #[arg(long, conflicts_with = "method")]
    fixed_tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = Method::ScaleShape)]
    method: Method,
    /// Write the per-iteration trace to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct CertificateArgs {
    problem: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    problem: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Compare against central differences of re-solves.
    #[arg(long)]
    check_fd: bool,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// Relative tolerance for the difference check.
    #[arg(long, default_value_t = 1e-4)]
    fd_tol: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    problem: PathBuf,
    /// Largest λ.
    #[arg(long)]
    from: f64,
    /// Smallest λ.
    #[arg(long)]
    to: f64,
    #[arg(long)]
    points: usize,
    /// Sweep with the scale held at this value.
    #[arg(long)]
    fixed_tau: Option<f64>,
    /// Start every point from the origin instead of the previous solution.
    #[arg(long)]
    cold: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 201)]
    m: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 18.68)]
    beta_temp: f64,
    #[arg(long, default_value_t = 4e-3)]
    omega_min: f64,
    #[arg(long, default_value_t = 4.0)]
    omega_max: f64,
    /// Total mass `Z` of the ground truth.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Relative multiplicative noise level.
    #[arg(long, default_value_t = 1e-4)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Overflow,
    Scale,
    Path,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long, env = "SCALESHAPE_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated scales `Z`; defaults to the experiment's own list.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// λ for the overflow and scale experiments.
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
    /// Operator rows; smaller values give quick smoke runs.
    #[arg(long, default_value_t = 201)]
    m: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[command(flatten)]
    solver: SolverFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => commands::solve_cmd(&args),
        Command::Certificates(args) => commands::certificates(&args),
        Command::Sensitivity(args) => commands::sensitivity(&args),
        Command::SweepLambda(args) => commands::sweep_lambda(&args),
        Command::GenProblem(args) => commands::gen_problem(&args),
        Command::Run(args) => commands::run(&args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_INCOMPLETE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
