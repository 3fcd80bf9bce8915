//! `pllasso`: fit estimators, evaluate cone constants and tuning
//! formulas, and run Monte Carlo verification campaigns.
//!
//! JSON goes to stdout, progress and diagnostics to stderr. Exit status is
//! 0 on success, 1 on a usage or validation error and 2 when `verify`
//! finds a failing report.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "pllasso",
    version,
    about = "Lasso variants for partially labeled data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an estimator on a CSV dataset.
    Fit(FitArgs),
    /// Compute cone constants of a matrix on a support.
    Constants(ConstantsArgs),
    /// Evaluate a tuning formula.
    Lambda(LambdaArgs),
    /// Run a Monte Carlo experiment and write its report.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo experiment and exit 2 unless it passes.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV: header x1,...,xp,y; unlabeled rows leave y empty.
    #[arg(long)]
    pub dataset: PathBuf,
    /// supervised, transductive, transductive_projected, semisupervised,
    /// alquier or known_sigma.
    #[arg(long, default_value = "semisupervised")]
    pub variant: String,
    /// A nonnegative number, or `auto` for the formula matching the variant.
    #[arg(long)]
    pub lambda: String,
    /// With `--lambda auto`: use the well-specified semi-supervised formula.
    #[arg(long)]
    pub well_specified: bool,
    /// Confidence level for `--lambda auto`.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Feature bound; inferred from the data when omitted.
    #[arg(long)]
    pub bx: Option<f64>,
    /// Label bound; inferred from the data when omitted.
    #[arg(long)]
    pub by: Option<f64>,
    /// Population covariance as a headerless CSV (known_sigma only).
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// KKT tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = pllasso::solver::DEFAULT_MAX_SWEEPS)]
    pub max_sweeps: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Print the rule behind an automatic λ to stderr.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConstantKind {
    Compatibility,
    #[value(alias = "weak")]
    WeakCompatibility,
    #[value(name = "re", alias = "restricted-eigenvalue")]
    RestrictedEigenvalue,
    All,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    /// Square matrix as a headerless CSV.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub matrix: Option<PathBuf>,
    /// Dataset CSV whose Gram matrix is used.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Rows of the dataset entering the Gram matrix: labeled, unlabeled or all.
    #[arg(long, default_value = "all", requires = "dataset")]
    pub scope: String,
    /// Support J as 1-based indices, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "sparsity")]
    pub support: Vec<usize>,
    /// Minimize the restricted eigenvalue over all |J| at most this size.
    #[arg(long, conflicts_with = "support")]
    pub sparsity: Option<usize>,
    /// Cone width c.
    #[arg(long, default_value_t = 3.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = ConstantKind::All)]
    pub kind: ConstantKind,
    /// Starting points per support for the restricted eigenvalue search.
    #[arg(long, default_value_t = 4)]
    pub starts: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LambdaArgs {
    /// T1, T2 (T2_a, T2_b), T3, Cor1 or T4.
    #[arg(long)]
    pub theorem: String,
    #[arg(long)]
    pub bx: f64,
    #[arg(long)]
    pub by: f64,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// min(n, m); sets n = m = n* (T1 only).
    #[arg(long, conflicts_with_all = ["n", "n_total"])]
    pub nstar: Option<usize>,
    /// Number of labeled rows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Total number of rows, labeled and unlabeled.
    #[arg(long = "n-total", visible_alias = "N")]
    pub n_total: Option<usize>,
    /// Print the formula and its inputs as JSON instead of the bare value.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of concurrent trials.
    #[arg(long, short)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Report JSON path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Per-trial CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(flag: &str, message: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: format!("{flag}: {message}"),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Constants(a) => commands::constants(&a),
        Command::Lambda(a) => commands::lambda(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
