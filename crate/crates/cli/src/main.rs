//! Command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "sigmadiv",
    version,
    about = "Bayesian nonparametric biodiversity inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Point estimates and posterior draws of the diversity parameter.
    Fit(FitArgs),
    /// Model checks: rarefaction, frequency counts and rank abundance.
    Validate(ValidateArgs),
    /// Posterior of the total number of taxa in a finite population.
    Richness(RichnessArgs),
    /// Expected accumulation beyond the observed sample.
    Extrapolate(ExtrapolateArgs),
    /// Hierarchical fit of a taxonomic tree.
    Taxonomic(TaxonomicArgs),
    /// Simulates samples from an urn scheme.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Directory for output files.
    #[arg(long, short = 'o')]
    output_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Seed for every random draw.
    #[arg(long)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

/// Abundance data from a file or as sufficient statistics.
#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// CSV with header `taxon,count`.
    #[arg(long, short = 'i', conflicts_with_all = ["n", "k"])]
    input: Option<PathBuf>,
    /// Sample size, when only sufficient statistics are available.
    #[arg(long, requires = "k")]
    n: Option<u64>,
    /// Number of distinct taxa.
    #[arg(long, requires = "n")]
    k: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Family {
    Dm,
    Dp,
    Ap,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "dp")]
    family: Family,
    /// Dirichlet-process precision; the ML estimate when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    /// Aldous-Pitman diversity.
    #[arg(long)]
    gamma: Option<f64>,
    /// Dirichlet-multinomial discount, negative.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    sigma: f64,
    /// Dirichlet-multinomial number of taxa.
    #[arg(long)]
    h: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct PriorArgs {
    /// Stirling-gamma prior `a b n_ref` on the DP precision.
    #[arg(long, num_args = 3, value_names = ["A", "B", "NREF"])]
    sg: Option<Vec<f64>>,
    /// Gamma prior `shape rate` on the AP diversity.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["py", "ig"])]
    gamma_prior: Option<Vec<f64>>,
    /// Pitman-Yor induced prior on the AP diversity.
    #[arg(long, conflicts_with = "ig", allow_hyphen_values = true)]
    py: Option<f64>,
    /// Inverse-Gaussian induced prior on the AP diversity.
    #[arg(long)]
    ig: Option<f64>,
    /// Coarsening exponent in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "dp")]
    family: Family,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    sigma: f64,
    /// Largest `H` for the Dirichlet-multinomial posterior.
    #[arg(long)]
    h_max: Option<u64>,
    #[command(flatten)]
    prior: PriorArgs,
    /// Number of posterior draws.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    /// Gibbs iterations for the AP gamma prior; 0 uses the exact iid sampler.
    #[arg(long, default_value_t = 0)]
    mcmc_iters: usize,
    #[arg(long, default_value_t = 1_000)]
    burn_in: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with header `taxon,count`.
    #[arg(long, short = 'i')]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1_000)]
    replicates: usize,
    /// Number of points on the rarefaction curve.
    #[arg(long, default_value_t = 200)]
    points: u64,
    /// Largest frequency in the frequency-count table.
    #[arg(long, default_value_t = 50)]
    r_max: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct RichnessArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Point estimate of the population size.
    #[arg(long)]
    n_hat: f64,
    /// Half-width of the uniform prior on N, relative to `n_hat`.
    #[arg(long, default_value_t = 0.5)]
    half_width: f64,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ExtrapolateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of additional observations.
    #[arg(long)]
    m: u64,
    #[arg(long, default_value_t = 200)]
    points: u64,
    #[arg(long, default_value_t = 1_000)]
    replicates: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TaxonomicArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with header `level1,...,levelL,count`.
    #[arg(long, short = 'i')]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Family of each level, e.g. `dp,dp,ap`; level 1 must be `dp`.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Coarsening of each level, e.g. `1,1,0.25`.
    #[arg(long, value_delimiter = ',')]
    rho_levels: Option<Vec<f64>>,
    /// Stirling-gamma `a b n_ref` for DP branches below level 1.
    #[arg(long, num_args = 3, default_values_t = [0.3, 0.1, 100.0])]
    branch_sg: Vec<f64>,
    /// Stirling-gamma `a b n_ref` for level 1; `n_ref = 0` uses the sample size.
    #[arg(long, num_args = 3, default_values_t = [0.3, 0.1, 100.0])]
    sg: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    mcmc_iters: usize,
    #[arg(long, default_value_t = 1_000)]
    burn_in: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of observations.
    #[arg(long)]
    n: u64,
    /// JSON file with a nested specification; overrides the family flags.
    #[arg(long)]
    nested: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Lib(sigmadiv::Error),
    Usage(String),
    Internal(String),
}

impl From<sigmadiv::Error> for CliError {
    fn from(e: sigmadiv::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        use sigmadiv::Error as E;
        match self {
            CliError::Lib(e) => match e {
                E::Parse { .. }
                | E::DuplicateTaxon(_)
                | E::InconsistentNesting { .. }
                | E::Empty(_)
                | E::Csv(_)
                | E::Json(_)
                | E::Io { .. } => 2,
                E::Domain(_) | E::NoFiniteSolution { .. } | E::TableSizeExceeded { .. } => 3,
                E::RejectionLimit(_) | E::NonConvergence(_) => 4,
            },
            CliError::Usage(_) => 3,
            CliError::Internal(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Fit(a) => &a.common,
        Command::Validate(a) => &a.common,
        Command::Richness(a) => &a.common,
        Command::Extrapolate(a) => &a.common,
        Command::Taxonomic(a) => &a.common,
        Command::Simulate(a) => &a.common,
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    if let Some(t) = common(&cmd).threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut config = serde_json::to_value(&cmd).map_err(|e| CliError::Internal(e.to_string()))?;
    // thread count does not affect results, keep it out of the output
    strip_key(&mut config, "threads");
    strip_key(&mut config, "output_dir");
    let c = common(&cmd);
    let w = output::Writer::new(&c.output_dir, c.format, config)?;
    match cmd {
        Command::Fit(a) => commands::fit(&a, &w),
        Command::Validate(a) => commands::validate(&a, &w),
        Command::Richness(a) => commands::richness(&a, &w),
        Command::Extrapolate(a) => commands::extrapolate(&a, &w),
        Command::Taxonomic(a) => commands::taxonomic(&a, &w),
        Command::Simulate(a) => commands::simulate(&a, &w),
    }
}

fn strip_key(v: &mut serde_json::Value, key: &str) {
    match v {
        serde_json::Value::Object(o) => {
            o.remove(key);
            o.values_mut().for_each(|x| strip_key(x, key));
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| strip_key(x, key)),
        _ => {}
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
