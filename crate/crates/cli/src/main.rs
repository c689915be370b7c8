#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "depkern", version, about = "Kernel dependence coefficient, independence tests and simulations")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "DEPKERN_THREADS")]
    threads: Option<usize>,

    /// Output format.
    #[arg(long, global = true, value_enum)]
    output: Option<OutputFormat>,

    /// Write the primary output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate tau², r and xi from a two-column CSV file.
    Estimate(EstimateArgs),
    /// Test independence on a two-column CSV file.
    Test(TestArgs),
    /// Limiting null variance of the normalized kernel statistic.
    Sigma0(Sigma0Args),
    /// Finite-sample null centering for a sample size.
    Centering(CenteringArgs),
    /// Monte Carlo power study.
    Simulate(SimulateArgs),
    /// Null distribution histogram of the normalized kernel statistic.
    Nulldist(NulldistArgs),
    /// Permutation checks of the null decomposition.
    Oracle(OracleArgs),
    /// Asymptotic variance under an explicit copula.
    Sigma2(Sigma2Args),
}

/// A bandwidth value or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bw {
    Auto,
    Value(f64),
}

fn parse_bw(s: &str) -> Result<Bw, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Bw::Auto);
    }
    s.parse::<f64>()
        .map(Bw::Value)
        .map_err(|_| format!("expected a real number or `auto`, got `{s}`"))
}

fn parse_kernel(s: &str) -> Result<depkern::KernelName, String> {
    s.parse().map_err(|e: depkern::Error| e.to_string())
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// epanechnikov or triangular.
    #[arg(long, default_value = "epanechnikov", value_parser = parse_kernel)]
    kernel: depkern::KernelName,
    /// First bandwidth, or `auto` for n^-0.3.
    #[arg(long, default_value = "auto", value_parser = parse_bw)]
    h1: Bw,
    /// Second bandwidth, or `auto` for n^-0.8.
    #[arg(long, default_value = "auto", value_parser = parse_bw)]
    h2: Bw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ties {
    Error,
    Jitter,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV file whose first two columns are x and y.
    #[arg(long)]
    input: PathBuf,
    /// The first row is a header (default: detect).
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    /// The first row is data.
    #[arg(long)]
    no_header: bool,
    /// Tie handling.
    #[arg(long, value_enum, default_value = "error")]
    ties: Ties,
    /// Seed for the jitter tie-break.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// kernel or chatterjee.
    #[arg(long, default_value = "kernel")]
    method: String,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct Sigma0Args {
    #[arg(long, default_value = "epanechnikov", value_parser = parse_kernel)]
    kernel: depkern::KernelName,
    /// Absolute quadrature tolerance.
    #[arg(long, default_value_t = depkern::coefficients::SIGMA0_DEFAULT_TOL)]
    tol: f64,
}

#[derive(Debug, Args)]
struct CenteringArgs {
    #[arg(long)]
    n: usize,
    /// Report the off-diagonal surrogate instead of the exact centering.
    #[arg(long)]
    surrogate: bool,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioKind {
    Table1,
    Custom,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "custom")]
    scenario: ScenarioKind,
    /// Comma-separated sample sizes (custom scenario).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma-separated rules: zero, n-pow, nh1-pow, fixed:<rho> (custom scenario).
    #[arg(long = "rho-rule", value_delimiter = ',')]
    rho_rule: Vec<String>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated methods (custom scenario).
    #[arg(long, value_delimiter = ',', default_value = "kernel,chatterjee")]
    methods: Vec<String>,
    /// Comma-separated kernels (custom scenario).
    #[arg(long, value_delimiter = ',', default_value = "epanechnikov,triangular", value_parser = parse_kernel)]
    kernels: Vec<depkern::KernelName>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed first bandwidth for all n, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_bw)]
    h1: Bw,
    /// Fixed second bandwidth for all n, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_bw)]
    h2: Bw,
}

#[derive(Debug, Args)]
struct NulldistArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the JSON sidecar (default: <out>.json when --out is given).
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    /// Random permutations used when n is too large to enumerate.
    #[arg(long, default_value_t = 20000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CopulaKind {
    Independence,
    Gaussian,
}

#[derive(Debug, Args)]
struct Sigma2Args {
    #[arg(long, value_enum)]
    copula: CopulaKind,
    /// Correlation of the Gaussian copula.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "nodes-3d", default_value_t = 64)]
    nodes_3d: usize,
    #[arg(long = "nodes-4d", default_value_t = 32)]
    nodes_4d: usize,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] depkern::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use depkern::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Write { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::UnknownKernel(_) | E::Config(_) | E::TooLarge { .. } => 1,
                E::Io { .. }
                | E::Parse { .. }
                | E::Format(_)
                | E::Ties { .. }
                | E::SampleTooSmall { .. }
                | E::Model { .. } => 2,
                E::Quadrature(_) | E::Internal(_) => 3,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Finished output of a subcommand.
struct Rendered {
    body: String,
    warnings: Vec<String>,
    /// Extra files to write, such as a JSON sidecar.
    extra: Vec<(PathBuf, String)>,
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    std::fs::write(path, body).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?,
        None => {}
    }
    let rendered = commands::dispatch(&cli.command, cli.output, cli.out.as_deref())?;
    for w in &rendered.warnings {
        eprintln!("warning: {w}");
    }
    for (path, body) in &rendered.extra {
        write_file(path, body)?;
    }
    match &cli.out {
        Some(path) => write_file(path, &rendered.body)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(rendered.body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Write {
                    path: "standard output".into(),
                    source,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
