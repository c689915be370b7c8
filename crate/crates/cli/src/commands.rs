use std::path::{Path, PathBuf};
use std::time::Instant;

use depkern::coefficients::{
    a_offdiag_sum, centering_surrogate, sigma0_sq, Bandwidths, CenteringParts, CoefficientTables,
    DEFAULT_H1_EXPONENT, DEFAULT_H2_EXPONENT,
};
use depkern::copula_variance::{gaussian_copula_model, variance_terms, CopulaModel, VarianceBreakdown};
use depkern::data::{read_csv_with, HeaderMode, TiePolicy};
use depkern::estimators::{estimate, EstimateReport};
use depkern::format::{real_csv, ser_real, to_json};
use depkern::inference::{chatterjee_test, kernel_test, Method, TestReport};
use depkern::montecarlo::{
    d_term_bridge, run_null_histogram, run_power_study, t_term_bridge, BandwidthSpec, BridgeReport,
    PowerRow, RhoRule, Scenario,
};
use depkern::perm_oracle::{mu2_two_ways, oracle_report, DecompositionTables, OracleReport, MAX_ENUMERATION_N};
use depkern::{Kernel, KernelName};
use serde::Serialize;

use crate::{
    Bw, CenteringArgs, CliError, CliResult, Command, CopulaKind, EstimateArgs, InputArgs, KernelArgs,
    NulldistArgs, OracleArgs, OutputFormat, Rendered, ScenarioKind, Sigma0Args, Sigma2Args,
    SimulateArgs, TestArgs, Ties,
};

/// Largest n for the random-permutation oracle, which stores dense n × n arrays.
const MAX_MONTE_CARLO_ORACLE_N: usize = 3000;

pub(crate) fn dispatch(cmd: &Command, output: Option<OutputFormat>, out: Option<&Path>) -> CliResult<Rendered> {
    match cmd {
        Command::Estimate(a) => cmd_estimate(a, output.unwrap_or(OutputFormat::Json)),
        Command::Test(a) => cmd_test(a, output.unwrap_or(OutputFormat::Json)),
        Command::Sigma0(a) => cmd_sigma0(a, output.unwrap_or(OutputFormat::Json)),
        Command::Centering(a) => cmd_centering(a, output.unwrap_or(OutputFormat::Json)),
        Command::Simulate(a) => cmd_simulate(a, output.unwrap_or(OutputFormat::Csv)),
        Command::Nulldist(a) => cmd_nulldist(a, output.unwrap_or(OutputFormat::Csv), out),
        Command::Oracle(a) => cmd_oracle(a, output.unwrap_or(OutputFormat::Json)),
        Command::Sigma2(a) => cmd_sigma2(a, output.unwrap_or(OutputFormat::Json)),
    }
}

fn rendered(body: String, warnings: Vec<String>) -> Rendered {
    Rendered {
        body,
        warnings,
        extra: Vec::new(),
    }
}

/// Header line plus one data line.
fn csv_row(header: &[&str], values: &[String]) -> String {
    format!("{}\n{}\n", header.join(","), values.join(","))
}

fn bandwidths(n: usize, args: &KernelArgs) -> CliResult<Bandwidths> {
    match (args.h1, args.h2) {
        (Bw::Auto, Bw::Auto) => Ok(Bandwidths::default_powers(n)?),
        (h1, h2) => {
            let nf = n as f64;
            let pick = |b: Bw, exp: f64| match b {
                Bw::Auto => nf.powf(exp),
                Bw::Value(v) => v,
            };
            Ok(Bandwidths::explicit(
                pick(h1, DEFAULT_H1_EXPONENT),
                pick(h2, DEFAULT_H2_EXPONENT),
            )?)
        }
    }
}

fn tie_policy(args: &InputArgs) -> TiePolicy {
    match args.ties {
        Ties::Error => TiePolicy::Error,
        Ties::Jitter => TiePolicy::Jitter { seed: args.seed },
    }
}

fn load(args: &InputArgs) -> CliResult<depkern::data::CsvData> {
    let mode = if args.header {
        HeaderMode::Present
    } else if args.no_header {
        HeaderMode::Absent
    } else {
        HeaderMode::Auto
    };
    Ok(read_csv_with(&args.input, mode)?)
}

fn cmd_estimate(args: &EstimateArgs, output: OutputFormat) -> CliResult<Rendered> {
    let data = load(&args.input)?;
    let n = data.sample.n();
    let bw = bandwidths(n, &args.kernel)?;
    let mut report: EstimateReport = estimate(&data.sample, args.kernel.kernel, bw, tie_policy(&args.input))?;
    let mut warnings = data.warnings;
    warnings.append(&mut report.warnings);
    report.warnings = warnings.clone();
    let body = match output {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => csv_row(
            &["n", "kernel", "h1", "h2", "tau2_hat", "r_hat", "xi_hat"],
            &[
                n.to_string(),
                report.kernel.to_string(),
                real_csv(report.h1),
                real_csv(report.h2),
                real_csv(report.tau2_hat),
                real_csv(report.r_hat),
                real_csv(report.xi_hat),
            ],
        ),
    };
    Ok(rendered(body, warnings))
}

fn cmd_test(args: &TestArgs, output: OutputFormat) -> CliResult<Rendered> {
    let method: Method = args.method.parse().map_err(|e: depkern::Error| CliError::Usage(e.to_string()))?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let data = load(&args.input)?;
    let ties = tie_policy(&args.input);
    let mut report: TestReport = match method {
        Method::Kernel => {
            let bw = bandwidths(data.sample.n(), &args.kernel)?;
            kernel_test(&data.sample, args.kernel.kernel, bw, args.alpha, ties)?
        }
        Method::Chatterjee => chatterjee_test(&data.sample, args.alpha, ties)?,
    };
    let mut warnings = data.warnings;
    warnings.append(&mut report.warnings);
    report.warnings = warnings.clone();
    let body = match output {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => {
            let opt = |x: Option<f64>| x.map(real_csv).unwrap_or_default();
            let c = &report.components;
            csv_row(
                &[
                    "method", "n", "kernel", "h1", "h2", "statistic", "p_value", "alpha", "reject", "tau2_hat",
                    "r_hat", "b_n", "sigma0", "xi_hat",
                ],
                &[
                    report.method.as_str().to_string(),
                    report.n.to_string(),
                    report.kernel.map(|k| k.to_string()).unwrap_or_default(),
                    opt(report.h1),
                    opt(report.h2),
                    real_csv(report.statistic),
                    real_csv(report.p_value),
                    real_csv(report.alpha),
                    report.reject.to_string(),
                    opt(c.tau2_hat),
                    opt(c.r_hat),
                    opt(c.b_n),
                    opt(c.sigma0),
                    opt(c.xi_hat),
                ],
            )
        }
    };
    Ok(rendered(body, warnings))
}

#[derive(Serialize)]
struct Sigma0Report {
    kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    tol: f64,
    #[serde(serialize_with = "ser_real")]
    sigma0_sq: f64,
    #[serde(serialize_with = "ser_real")]
    sigma0: f64,
}

fn cmd_sigma0(args: &Sigma0Args, output: OutputFormat) -> CliResult<Rendered> {
    if !(args.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", args.tol)));
    }
    let s2 = sigma0_sq(&Kernel::new(args.kernel), args.tol)?;
    let report = Sigma0Report {
        kernel: args.kernel,
        tol: args.tol,
        sigma0_sq: s2,
        sigma0: s2.sqrt(),
    };
    let body = match output {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => csv_row(
            &["kernel", "tol", "sigma0_sq", "sigma0"],
            &[
                report.kernel.to_string(),
                real_csv(report.tol),
                real_csv(report.sigma0_sq),
                real_csv(report.sigma0),
            ],
        ),
    };
    Ok(rendered(body, Vec::new()))
}

#[derive(Serialize)]
struct CenteringReport {
    n: usize,
    kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    h1: f64,
    #[serde(serialize_with = "ser_real")]
    h2: f64,
    #[serde(serialize_with = "ser_real")]
    b_hat_n: f64,
    #[serde(serialize_with = "ser_real")]
    b_n: f64,
    components: CenteringParts,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct SurrogateComponents {
    /// `Σ_{i≠j} a_{ij}`.
    #[serde(serialize_with = "ser_real")]
    a_offdiag_sum: f64,
}

#[derive(Serialize)]
struct SurrogateReport {
    n: usize,
    kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    h1: f64,
    #[serde(serialize_with = "ser_real")]
    b_tilde_n: f64,
    components: SurrogateComponents,
    warnings: Vec<String>,
}

fn cmd_centering(args: &CenteringArgs, output: OutputFormat) -> CliResult<Rendered> {
    let min = if args.surrogate { 3 } else { 4 };
    if args.n < min {
        return Err(CliError::Usage(format!("--n must be at least {min}, got {}", args.n)));
    }
    let kernel = Kernel::new(args.kernel.kernel);
    let bw = bandwidths(args.n, &args.kernel)?;
    let warnings = bw.regime_warnings(args.n);
    let body = if args.surrogate {
        let report = SurrogateReport {
            n: args.n,
            kernel: args.kernel.kernel,
            h1: bw.h1,
            b_tilde_n: centering_surrogate(args.n, bw.h1, &kernel)?,
            components: SurrogateComponents {
                a_offdiag_sum: a_offdiag_sum(args.n, bw.h1, &kernel)?,
            },
            warnings: warnings.clone(),
        };
        match output {
            OutputFormat::Json => to_json(&report)?,
            OutputFormat::Csv => csv_row(
                &["n", "kernel", "h1", "b_tilde_n", "a_offdiag_sum"],
                &[
                    report.n.to_string(),
                    report.kernel.to_string(),
                    real_csv(report.h1),
                    real_csv(report.b_tilde_n),
                    real_csv(report.components.a_offdiag_sum),
                ],
            ),
        }
    } else {
        let tables = CoefficientTables::cached(args.n, args.kernel.kernel, bw)?;
        let parts = CenteringParts::from_tables(&tables);
        let b_hat_n = parts.bhat();
        let report = CenteringReport {
            n: args.n,
            kernel: args.kernel.kernel,
            h1: bw.h1,
            h2: bw.h2,
            b_hat_n,
            b_n: 6.0 * b_hat_n - 2.0,
            components: parts,
            warnings: warnings.clone(),
        };
        match output {
            OutputFormat::Json => to_json(&report)?,
            OutputFormat::Csv => csv_row(
                &[
                    "n",
                    "kernel",
                    "h1",
                    "h2",
                    "b_hat_n",
                    "b_n",
                    "offdiag_kernel_factor",
                    "offdiag_b_mean",
                    "diag_kernel_factor",
                    "diag_b_mean",
                ],
                &[
                    report.n.to_string(),
                    report.kernel.to_string(),
                    real_csv(report.h1),
                    real_csv(report.h2),
                    real_csv(report.b_hat_n),
                    real_csv(report.b_n),
                    real_csv(parts.offdiag_kernel_factor),
                    real_csv(parts.offdiag_b_mean),
                    real_csv(parts.diag_kernel_factor),
                    real_csv(parts.diag_b_mean),
                ],
            ),
        }
    };
    Ok(rendered(body, warnings))
}

#[derive(Serialize)]
struct PowerRowJson {
    n: usize,
    rho_rule: String,
    #[serde(serialize_with = "ser_real")]
    rho: f64,
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelName>,
    #[serde(serialize_with = "depkern::format::ser_opt_real", skip_serializing_if = "Option::is_none")]
    h1: Option<f64>,
    #[serde(serialize_with = "depkern::format::ser_opt_real", skip_serializing_if = "Option::is_none")]
    h2: Option<f64>,
    #[serde(serialize_with = "ser_real")]
    alpha: f64,
    reps: usize,
    rejections: usize,
    #[serde(serialize_with = "ser_real")]
    reject_rate: f64,
    seed: u64,
}

impl From<&PowerRow> for PowerRowJson {
    fn from(r: &PowerRow) -> Self {
        PowerRowJson {
            n: r.n,
            rho_rule: r.rho_rule.to_string(),
            rho: r.rho,
            method: r.method,
            kernel: r.kernel,
            h1: r.h1,
            h2: r.h2,
            alpha: r.alpha,
            reps: r.reps,
            rejections: r.rejections,
            reject_rate: r.reject_rate,
            seed: r.seed,
        }
    }
}

#[derive(Serialize)]
struct PowerJson {
    master_seed: u64,
    reps: usize,
    rows: Vec<PowerRowJson>,
    warnings: Vec<String>,
}

fn scenario(args: &SimulateArgs) -> CliResult<Scenario> {
    if args.reps < 1 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if args.scenario == ScenarioKind::Table1 {
        return Ok(Scenario::table1(args.reps, args.seed));
    }
    if args.n.is_empty() || args.rho_rule.is_empty() {
        return Err(CliError::Usage("custom scenario needs --n and --rho-rule".into()));
    }
    let usage = |e: depkern::Error| CliError::Usage(e.to_string());
    let rho_rules = args
        .rho_rule
        .iter()
        .map(|s| s.parse::<RhoRule>().map_err(usage))
        .collect::<CliResult<Vec<_>>>()?;
    let methods = args
        .methods
        .iter()
        .map(|s| s.parse::<Method>().map_err(usage))
        .collect::<CliResult<Vec<_>>>()?;
    let bandwidths = match (args.h1, args.h2) {
        (Bw::Auto, Bw::Auto) => BandwidthSpec::Default,
        (Bw::Value(h1), Bw::Value(h2)) => BandwidthSpec::Fixed { h1, h2 },
        _ => return Err(CliError::Usage("give both --h1 and --h2, or neither".into())),
    };
    let s = Scenario {
        n_list: args.n.clone(),
        rho_rules,
        reps: args.reps,
        kernels: args.kernels.clone(),
        bandwidths,
        alpha: args.alpha,
        master_seed: args.seed,
        methods,
    };
    s.validate().map_err(|e| match e {
        depkern::Error::SampleTooSmall { n, min } => CliError::Usage(format!("--n {n} is below the minimum {min}")),
        other => CliError::Core(other),
    })?;
    Ok(s)
}

fn cmd_simulate(args: &SimulateArgs, output: OutputFormat) -> CliResult<Rendered> {
    let scenario = scenario(args)?;
    let table = run_power_study(&scenario)?;
    log::info!("power study finished in {:.3} s", table.runtime.as_secs_f64());
    let body = match output {
        OutputFormat::Csv => table.to_csv()?,
        OutputFormat::Json => to_json(&PowerJson {
            master_seed: table.master_seed,
            reps: table.reps,
            rows: table.rows.iter().map(PowerRowJson::from).collect(),
            warnings: table.warnings.clone(),
        })?,
    };
    Ok(rendered(body, table.warnings))
}

fn cmd_nulldist(args: &NulldistArgs, output: OutputFormat, out: Option<&Path>) -> CliResult<Rendered> {
    if args.n < 4 {
        return Err(CliError::Usage(format!("--n must be at least 4, got {}", args.n)));
    }
    let bw = bandwidths(args.n, &args.kernel)?;
    let start = Instant::now();
    let hist = run_null_histogram(args.n, args.reps, args.kernel.kernel, bw, args.bins, args.seed)?;
    log::info!("null histogram finished in {:.3} s", start.elapsed().as_secs_f64());
    let sidecar = hist.sidecar_json()?;
    let sidecar_path = args.sidecar.clone().or_else(|| {
        out.map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".json");
            PathBuf::from(s)
        })
    });
    let body = match output {
        OutputFormat::Csv => hist.to_csv()?,
        OutputFormat::Json => sidecar.clone(),
    };
    let mut r = rendered(body, hist.warnings.clone());
    if let Some(path) = sidecar_path {
        r.extra.push((path, sidecar));
    }
    Ok(r)
}

#[derive(Serialize)]
struct OracleHeader {
    n: usize,
    kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    h1: f64,
    #[serde(serialize_with = "ser_real")]
    h2: f64,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum OracleJson {
    Exhaustive {
        #[serde(flatten)]
        header: OracleHeader,
        report: OracleReport,
    },
    MonteCarlo {
        #[serde(flatten)]
        header: OracleHeader,
        seed: u64,
        #[serde(serialize_with = "ser_real")]
        mu2_closed_form: f64,
        #[serde(serialize_with = "ser_real")]
        mu2_direct: f64,
        d_term: BridgeReport,
        t_term: BridgeReport,
    },
}

fn cmd_oracle(args: &OracleArgs, output: OutputFormat) -> CliResult<Rendered> {
    if output == OutputFormat::Csv {
        return Err(CliError::Usage("oracle output is JSON only".into()));
    }
    if args.n < 4 || args.n > MAX_MONTE_CARLO_ORACLE_N {
        return Err(CliError::Usage(format!(
            "--n must lie in 4..={MAX_MONTE_CARLO_ORACLE_N}, got {}",
            args.n
        )));
    }
    if args.permutations < 2 {
        return Err(CliError::Usage("--permutations must be at least 2".into()));
    }
    let bw = bandwidths(args.n, &args.kernel)?;
    let kernel = args.kernel.kernel;
    let header = OracleHeader {
        n: args.n,
        kernel,
        h1: bw.h1,
        h2: bw.h2,
    };
    let tables = CoefficientTables::cached(args.n, kernel, bw)?;
    let report = if args.n <= MAX_ENUMERATION_N {
        OracleJson::Exhaustive {
            header,
            report: oracle_report(&tables)?,
        }
    } else {
        let mu2 = mu2_two_ways(&DecompositionTables::new(&tables));
        OracleJson::MonteCarlo {
            header,
            seed: args.seed,
            mu2_closed_form: mu2.closed_form,
            mu2_direct: mu2.direct,
            d_term: d_term_bridge(args.n, kernel, bw, args.permutations, args.seed)?,
            t_term: t_term_bridge(args.n, kernel, bw, args.permutations, args.seed)?,
        }
    };
    Ok(rendered(to_json(&report)?, bw.regime_warnings(args.n)))
}

fn cmd_sigma2(args: &Sigma2Args, output: OutputFormat) -> CliResult<Rendered> {
    let model = match (args.copula, args.rho) {
        (CopulaKind::Independence, None) => CopulaModel::Independence,
        (CopulaKind::Independence, Some(_)) => {
            return Err(CliError::Usage("--rho applies to the gaussian copula only".into()))
        }
        (CopulaKind::Gaussian, Some(rho)) => gaussian_copula_model(rho)?,
        (CopulaKind::Gaussian, None) => return Err(CliError::Usage("the gaussian copula needs --rho".into())),
    };
    let b: VarianceBreakdown = variance_terms(&model, args.nodes_3d, args.nodes_4d)?;
    let body = match output {
        OutputFormat::Json => to_json(&b)?,
        OutputFormat::Csv => csv_row(
            &[
                "model", "rho", "var_z1", "var_z2", "var_z3", "cov12_x2", "cov13_x2", "cov23_x2", "sigma_sq",
                "nodes_3d", "nodes_4d",
            ],
            &[
                b.model.to_string(),
                b.rho.map(real_csv).unwrap_or_default(),
                real_csv(b.var_z1),
                real_csv(b.var_z2),
                real_csv(b.var_z3),
                real_csv(b.cov12_x2),
                real_csv(b.cov13_x2),
                real_csv(b.cov23_x2),
                real_csv(b.sigma_sq),
                b.nodes_3d.to_string(),
                b.nodes_4d.to_string(),
            ],
        ),
    };
    Ok(rendered(body, Vec::new()))
}
