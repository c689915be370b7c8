//! Reproducible simulation: bivariate normal samples, power studies, null
//! histograms of the normalized kernel statistic, and random-permutation
//! checks of the null decomposition.
//!
//! Every replicate draws from its own ChaCha8 stream. The key is derived
//! from `(master_seed, cell)` and the stream number is the replicate index,
//! so results never depend on how replicates are scheduled across threads.
//! Replicates run in parallel and are reduced in index order.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{sigma0_sq_cached, Bandwidths, CoefficientTables};
use crate::data::{rank_sample, PairedSample, TiePolicy};
use crate::error::{Error, Result};
use crate::format::{real_csv, ser_real};
use crate::inference::{chatterjee_statistic, critical_value, KernelTestContext, Method};
use crate::normal::{quantile_unchecked, std_normal_cdf, std_normal_pdf};
use crate::perm_oracle::{var_d_formula, CenteredMoments, DecompositionTables};
use crate::polykernels::KernelName;

const HIST_LO: f64 = -4.0;
const HIST_HI: f64 = 4.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the ChaCha8 generator used for all replicates of `cell`.
pub fn cell_seed(master_seed: u64, cell: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(cell))
}

/// Generator for replicate `rep` of `cell`.
pub fn replicate_rng(master_seed: u64, cell: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(master_seed, cell));
    rng.set_stream(rep);
    rng
}

/// Uniform on the open interval `(0, 1)` from the top 53 bits.
fn open_uniform(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `n` pairs with `X ~ N(0, 1)` and `Y = ρX + √(1 − ρ²)ε`.
///
/// For each pair, two uniforms are drawn in order (for `X`, then `ε`) and
/// mapped through the normal quantile function.
pub fn sample_bivariate_normal(n: usize, rho: f64, rng: &mut impl RngCore) -> Result<PairedSample> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("rho must lie in [-1, 1], got {rho}")));
    }
    let s = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = quantile_unchecked(open_uniform(rng));
        let e = quantile_unchecked(open_uniform(rng));
        x.push(a);
        y.push(rho * a + s * e);
    }
    PairedSample::new(x, y)
}

/// Correlation path `ρₙ` for a power study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoRule {
    Zero,
    /// `n^{−1/4}`.
    NPow,
    /// `(n/h₁)^{−1/4}`.
    Nh1Pow,
    Fixed(f64),
}

impl RhoRule {
    pub fn rho(&self, n: usize, h1: f64) -> f64 {
        match *self {
            RhoRule::Zero => 0.0,
            RhoRule::NPow => (n as f64).powf(-0.25),
            RhoRule::Nh1Pow => (n as f64 / h1).powf(-0.25),
            RhoRule::Fixed(r) => r,
        }
    }
}

impl fmt::Display for RhoRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoRule::Zero => f.write_str("zero"),
            RhoRule::NPow => f.write_str("n-pow"),
            RhoRule::Nh1Pow => f.write_str("nh1-pow"),
            RhoRule::Fixed(r) => write!(f, "fixed:{r}"),
        }
    }
}

impl FromStr for RhoRule {
    type Err = Error;

    /// `zero`, `n-pow`, `nh1-pow` or `fixed:<rho>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(RhoRule::Zero),
            "n-pow" => Ok(RhoRule::NPow),
            "nh1-pow" => Ok(RhoRule::Nh1Pow),
            _ => {
                let bad = || Error::invalid(format!("unknown rho rule `{s}` (expected zero, n-pow, nh1-pow or fixed:<rho>)"));
                let v = s.strip_prefix("fixed:").ok_or_else(bad)?;
                let r: f64 = v.parse().map_err(|_| bad())?;
                if !(r.abs() <= 1.0) {
                    return Err(Error::invalid(format!("fixed rho must lie in [-1, 1], got {r}")));
                }
                Ok(RhoRule::Fixed(r))
            }
        }
    }
}

/// Bandwidths used at each sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthSpec {
    /// `h₁ = n^{−0.3}`, `h₂ = n^{−0.8}`.
    Default,
    Fixed { h1: f64, h2: f64 },
}

impl BandwidthSpec {
    pub fn at(&self, n: usize) -> Result<Bandwidths> {
        match *self {
            BandwidthSpec::Default => Bandwidths::default_powers(n),
            BandwidthSpec::Fixed { h1, h2 } => Bandwidths::explicit(h1, h2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_list: Vec<usize>,
    pub rho_rules: Vec<RhoRule>,
    pub reps: usize,
    pub kernels: Vec<KernelName>,
    pub bandwidths: BandwidthSpec,
    pub alpha: f64,
    pub master_seed: u64,
    pub methods: Vec<Method>,
}

impl Scenario {
    /// The 5 × 3 × 3 grid of the reference power table.
    pub fn table1(reps: usize, master_seed: u64) -> Self {
        Scenario {
            n_list: vec![100, 500, 1000, 5000, 10000],
            rho_rules: vec![RhoRule::NPow, RhoRule::Nh1Pow, RhoRule::Zero],
            reps,
            kernels: KernelName::ALL.to_vec(),
            bandwidths: BandwidthSpec::Default,
            alpha: 0.05,
            master_seed,
            methods: vec![Method::Kernel, Method::Chatterjee],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        critical_value(self.alpha)?;
        if self.n_list.is_empty() || self.rho_rules.is_empty() || self.methods.is_empty() {
            return Err(Error::invalid("scenario needs at least one n, rho rule and method"));
        }
        let kernel = self.methods.contains(&Method::Kernel);
        if kernel && self.kernels.is_empty() {
            return Err(Error::invalid("kernel method selected without any kernel"));
        }
        let min = if kernel { 4 } else { 2 };
        if let Some(&n) = self.n_list.iter().find(|&&n| n < min) {
            return Err(Error::SampleTooSmall { n, min });
        }
        for &n in &self.n_list {
            self.bandwidths.at(n)?;
        }
        Ok(())
    }

    /// Method/kernel columns in output order.
    fn combos(&self) -> Vec<(Method, Option<KernelName>)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            match m {
                Method::Kernel => out.extend(self.kernels.iter().map(|&k| (m, Some(k)))),
                Method::Chatterjee => out.push((m, None)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub n: usize,
    pub rho_rule: RhoRule,
    pub rho: f64,
    pub method: Method,
    pub kernel: Option<KernelName>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub alpha: f64,
    pub reps: usize,
    pub rejections: usize,
    pub reject_rate: f64,
    /// Key of the cell's generator, see [`cell_seed`].
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    pub reps: usize,
    pub master_seed: u64,
    pub runtime: Duration,
    pub warnings: Vec<String>,
}

impl PowerTable {
    pub fn row(&self, n: usize, rule: RhoRule, method: Method, kernel: Option<KernelName>) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.rho_rule == rule && r.method == method && r.kernel == kernel)
    }

    /// CSV with columns `n,rho_rule,method,kernel,h1,h2,alpha,reps,reject_rate,seed`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["n", "rho_rule", "method", "kernel", "h1", "h2", "alpha", "reps", "reject_rate", "seed"];
        w.write_record(header).map_err(csv_error)?;
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(real_csv).unwrap_or_default();
            w.write_record([
                r.n.to_string(),
                r.rho_rule.to_string(),
                r.method.as_str().to_string(),
                r.kernel.map(|k| k.as_str().to_string()).unwrap_or_default(),
                opt(r.h1),
                opt(r.h2),
                real_csv(r.alpha),
                r.reps.to_string(),
                real_csv(r.reject_rate),
                r.seed.to_string(),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Internal(format!("csv output failed: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Internal(format!("csv output failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Ranks of a fresh sample as the permutation `π[R_i] = S_i`.
fn sample_permutation(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let sample = sample_bivariate_normal(n, rho, rng)?;
    // exact ties have probability ~2⁻⁵³; break them from the same stream
    let ranked = rank_sample(&sample, TiePolicy::Jitter { seed: rng.next_u64() })?;
    Ok(ranked.permutation())
}

pub fn run_power_study(scenario: &Scenario) -> Result<PowerTable> {
    scenario.validate()?;
    let start = Instant::now();
    let combos = scenario.combos();
    let crit = critical_value(scenario.alpha)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut cell = 0u64;
    for &n in &scenario.n_list {
        let bw = scenario.bandwidths.at(n)?;
        for w in bw.regime_warnings(n) {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let contexts: Vec<Option<KernelTestContext>> = combos
            .iter()
            .map(|&(_, k)| k.map(|k| KernelTestContext::new(n, k, bw)).transpose())
            .collect::<Result<_>>()?;
        for &rule in &scenario.rho_rules {
            let rho = rule.rho(n, bw.h1);
            let seed = cell_seed(scenario.master_seed, cell);
            log::info!("cell {cell}: n = {n}, rho rule {rule} (rho = {rho})");
            let rejects: Vec<Vec<bool>> = (0..scenario.reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = replicate_rng(scenario.master_seed, cell, rep);
                    let pi = sample_permutation(n, rho, &mut rng)?;
                    contexts
                        .iter()
                        .map(|ctx| match ctx {
                            Some(ctx) => Ok(ctx.statistic(&pi)?.z > crit),
                            None => Ok(chatterjee_statistic(&pi).1 > crit),
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            for (c, &(method, kernel)) in combos.iter().enumerate() {
                let rejections = rejects.iter().filter(|r| r[c]).count();
                rows.push(PowerRow {
                    n,
                    rho_rule: rule,
                    rho,
                    method,
                    kernel,
                    h1: kernel.map(|_| bw.h1),
                    h2: kernel.map(|_| bw.h2),
                    alpha: scenario.alpha,
                    reps: scenario.reps,
                    rejections,
                    reject_rate: rejections as f64 / scenario.reps as f64,
                    seed,
                });
            }
            cell += 1;
        }
    }
    Ok(PowerTable {
        rows,
        reps: scenario.reps,
        master_seed: scenario.master_seed,
        runtime: start.elapsed(),
        warnings,
    })
}

/// Null distribution of `Z = √(n/h₁)(r̂ − bₙ)/(12σ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData {
    pub n: usize,
    pub reps: usize,
    pub kernel: KernelName,
    pub h1: f64,
    pub h2: f64,
    pub master_seed: u64,
    pub b_n: f64,
    pub sigma0: f64,
    /// `bins + 1` edges spanning `[−4, 4]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
    /// Standard normal density at each bin midpoint.
    pub normal_density_mid: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    /// Kolmogorov–Smirnov distance to the standard normal.
    pub ks_distance: f64,
    /// Statistic values in replicate order.
    pub samples: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct HistogramSidecar<'a> {
    n: usize,
    reps: usize,
    kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    h1: f64,
    #[serde(serialize_with = "ser_real")]
    h2: f64,
    seed: u64,
    bins: usize,
    #[serde(serialize_with = "crate::format::ser_real_vec")]
    range: &'a [f64],
    #[serde(serialize_with = "ser_real")]
    b_n: f64,
    #[serde(serialize_with = "ser_real")]
    sigma0: f64,
    in_range: usize,
    underflow: usize,
    overflow: usize,
    #[serde(serialize_with = "ser_real")]
    mean: f64,
    #[serde(serialize_with = "ser_real")]
    variance: f64,
    #[serde(serialize_with = "ser_real")]
    skewness: f64,
    #[serde(serialize_with = "ser_real")]
    ks_distance: f64,
    warnings: &'a [String],
}

impl HistogramData {
    /// CSV with columns `bin_lo,bin_hi,count,normal_density_mid`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_lo", "bin_hi", "count", "normal_density_mid"])
            .map_err(csv_error)?;
        for (b, &count) in self.counts.iter().enumerate() {
            w.write_record([
                real_csv(self.edges[b]),
                real_csv(self.edges[b + 1]),
                count.to_string(),
                real_csv(self.normal_density_mid[b]),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }

    /// JSON sidecar with configuration and moments.
    pub fn sidecar_json(&self) -> Result<String> {
        crate::format::to_json(&HistogramSidecar {
            n: self.n,
            reps: self.reps,
            kernel: self.kernel,
            h1: self.h1,
            h2: self.h2,
            seed: self.master_seed,
            bins: self.counts.len(),
            range: &[HIST_LO, HIST_HI],
            b_n: self.b_n,
            sigma0: self.sigma0,
            in_range: self.counts.iter().sum(),
            underflow: self.underflow,
            overflow: self.overflow,
            mean: self.mean,
            variance: self.variance,
            skewness: self.skewness,
            ks_distance: self.ks_distance,
            warnings: &self.warnings,
        })
    }
}

/// Sample mean, unbiased variance and skewness `m₃/m₂^{3/2}`.
pub fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / m;
    let var = if xs.len() > 1 { m2 * m / (m - 1.0) } else { 0.0 };
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, var, skew)
}

/// `sup |F̂ − Φ|` over the sample.
pub fn ks_distance_normal(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

pub fn run_null_histogram(
    n: usize,
    reps: usize,
    kernel: KernelName,
    bandwidths: Bandwidths,
    bins: usize,
    master_seed: u64,
) -> Result<HistogramData> {
    if reps < 100 {
        return Err(Error::invalid(format!("reps must be at least 100, got {reps}")));
    }
    if bins < 10 {
        return Err(Error::invalid(format!("bins must be at least 10, got {bins}")));
    }
    let ctx = KernelTestContext::new(n, kernel, bandwidths)?;
    let samples: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(master_seed, 0, rep);
            let pi = sample_permutation(n, 0.0, &mut rng)?;
            Ok(ctx.statistic(&pi)?.z)
        })
        .collect::<Result<_>>()?;

    let width = (HIST_HI - HIST_LO) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| HIST_LO + (HIST_HI - HIST_LO) * k as f64 / bins as f64)
        .collect();
    let mut counts = vec![0; bins];
    let (mut underflow, mut overflow) = (0, 0);
    for &z in &samples {
        if z < HIST_LO {
            underflow += 1;
        } else if z > HIST_HI {
            overflow += 1;
        } else {
            let b = (((z - HIST_LO) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let normal_density_mid = edges
        .windows(2)
        .map(|e| std_normal_pdf(0.5 * (e[0] + e[1])))
        .collect();
    let (mean, variance, skewness) = moments(&samples);
    Ok(HistogramData {
        n,
        reps,
        kernel,
        h1: bandwidths.h1,
        h2: bandwidths.h2,
        master_seed,
        b_n: ctx.b_n(),
        sigma0: ctx.sigma0(),
        edges,
        counts,
        underflow,
        overflow,
        normal_density_mid,
        mean,
        variance,
        skewness,
        ks_distance: ks_distance_normal(&samples),
        samples,
        warnings: bandwidths.regime_warnings(n),
    })
}

/// Empirical variance of a permutation functional against its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeReport {
    pub n: usize,
    pub permutations: usize,
    #[serde(serialize_with = "ser_real")]
    pub empirical: f64,
    #[serde(serialize_with = "ser_real")]
    pub target: f64,
    #[serde(serialize_with = "ser_real")]
    pub relative_error: f64,
    /// Exact permutation variance at this `n`, when available in closed form.
    #[serde(serialize_with = "crate::format::ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
}

impl BridgeReport {
    fn new(n: usize, values: &[f64], target: f64) -> Self {
        let empirical = moments(values).1;
        BridgeReport {
            n,
            permutations: values.len(),
            empirical,
            target,
            relative_error: (empirical - target).abs() / target.abs(),
            exact: None,
        }
    }
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pi: Vec<usize> = (1..=n).collect();
    pi.shuffle(rng);
    pi
}

/// Variance of `√(n/h₁)·2·(Tₙ − E Tₙ)` over uniform random permutations,
/// against its limit `4σ₀²`. `exact` holds the finite-`n` permutation
/// variance, which approaches the limit from below at rate about `h₁`.
pub fn t_term_bridge(
    n: usize,
    kernel: KernelName,
    bandwidths: Bandwidths,
    permutations: usize,
    master_seed: u64,
) -> Result<BridgeReport> {
    if permutations < 2 {
        return Err(Error::invalid("need at least two permutations"));
    }
    let tables = CoefficientTables::cached(n, kernel, bandwidths)?;
    let cm = CenteredMoments::new(&tables);
    let scale = 2.0 * (n as f64 / bandwidths.h1).sqrt();
    let values: Vec<f64> = (0..permutations as u64)
        .into_par_iter()
        .map(|rep| {
            let pi = random_permutation(n, &mut replicate_rng(master_seed, 0, rep));
            scale * cm.t_term(&tables, &pi)
        })
        .collect();
    let mut report = BridgeReport::new(n, &values, 4.0 * sigma0_sq_cached(kernel));
    report.exact = Some(scale * scale * cm.var_t(&tables));
    Ok(report)
}

/// Variance of `Dₙ` over uniform random permutations, against the closed
/// form built from `μ₂` of the doubly centered array.
pub fn d_term_bridge(
    n: usize,
    kernel: KernelName,
    bandwidths: Bandwidths,
    permutations: usize,
    master_seed: u64,
) -> Result<BridgeReport> {
    if permutations < 2 {
        return Err(Error::invalid("need at least two permutations"));
    }
    let tables = CoefficientTables::cached(n, kernel, bandwidths)?;
    let dec = DecompositionTables::new(&tables);
    let values: Vec<f64> = (0..permutations as u64)
        .into_par_iter()
        .map(|rep| {
            let pi = random_permutation(n, &mut replicate_rng(master_seed, 0, rep));
            dec.terms(&pi).d
        })
        .collect();
    Ok(BridgeReport::new(n, &values, var_d_formula(&tables, &dec)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(s: &PairedSample) -> f64 {
        let (x, y) = (s.x(), s.y());
        let m = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn bivariate_normal_correlation() {
        let s = sample_bivariate_normal(100_000, 0.0, &mut replicate_rng(1, 0, 0)).unwrap();
        assert!(correlation(&s).abs() < 0.01);
        let s = sample_bivariate_normal(100_000, 0.5, &mut replicate_rng(2, 0, 0)).unwrap();
        assert!((correlation(&s) - 0.5).abs() < 0.01);
        let (mean, var, _) = moments(s.x());
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02);
    }

    #[test]
    fn perfect_correlation_copies_x() {
        let s = sample_bivariate_normal(500, 1.0, &mut replicate_rng(3, 0, 0)).unwrap();
        assert_eq!(s.x(), s.y());
        assert!(sample_bivariate_normal(5, 1.5, &mut replicate_rng(3, 0, 0)).is_err());
        assert!(sample_bivariate_normal(5, f64::NAN, &mut replicate_rng(3, 0, 0)).is_err());
    }

    #[test]
    fn streams_are_distinct_and_repeatable() {
        let a = sample_bivariate_normal(10, 0.2, &mut replicate_rng(9, 4, 7)).unwrap();
        let b = sample_bivariate_normal(10, 0.2, &mut replicate_rng(9, 4, 7)).unwrap();
        let c = sample_bivariate_normal(10, 0.2, &mut replicate_rng(9, 4, 8)).unwrap();
        let d = sample_bivariate_normal(10, 0.2, &mut replicate_rng(9, 5, 7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x(), c.x());
        assert_ne!(a.x(), d.x());
    }

    #[test]
    fn rho_rules() {
        for s in ["zero", "n-pow", "nh1-pow", "fixed:0.25", "fixed:1", "fixed:-1"] {
            assert_eq!(s.parse::<RhoRule>().unwrap().to_string(), s);
        }
        assert!("fixed:1.5".parse::<RhoRule>().is_err());
        assert!("sometimes".parse::<RhoRule>().is_err());
        assert_eq!(RhoRule::NPow.rho(10000, 0.5), 0.1);
        let h1 = 1000f64.powf(-0.3);
        assert!((RhoRule::Nh1Pow.rho(1000, h1) - 1000f64.powf(-1.3 / 4.0)).abs() < 1e-15);
    }

    fn small_scenario(seed: u64) -> Scenario {
        Scenario {
            n_list: vec![60, 120],
            rho_rules: vec![RhoRule::Zero, RhoRule::Fixed(1.0)],
            reps: 40,
            kernels: KernelName::ALL.to_vec(),
            bandwidths: BandwidthSpec::Default,
            alpha: 0.05,
            master_seed: seed,
            methods: vec![Method::Kernel, Method::Chatterjee],
        }
    }

    #[test]
    fn power_table_layout_and_deterministic_dependence() {
        let t = run_power_study(&small_scenario(5)).unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * 3);
        for r in &t.rows {
            assert!((0.0..=1.0).contains(&r.reject_rate));
            if r.rho_rule == RhoRule::Fixed(1.0) {
                assert_eq!(r.reject_rate, 1.0, "{r:?}");
            }
        }
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("n,rho_rule,method,kernel,h1,h2,alpha,reps,reject_rate,seed\n"));
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.contains(",chatterjee,,,,"));
    }

    #[test]
    fn results_independent_of_thread_count() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let t = run_power_study(&small_scenario(11)).unwrap().to_csv().unwrap();
                let h = run_null_histogram(80, 120, KernelName::Triangular, Bandwidths::default_powers(80).unwrap(), 12, 11)
                    .unwrap();
                (t, h)
            })
        };
        let (t1, h1) = run(1);
        let (t4, h4) = run(4);
        assert_eq!(t1, t4);
        assert_eq!(h1, h4);
        assert_eq!(h1.to_csv().unwrap(), h4.to_csv().unwrap());
    }

    #[test]
    fn scenario_validation() {
        let mut s = small_scenario(1);
        s.reps = 0;
        assert!(run_power_study(&s).is_err());
        let mut s = small_scenario(1);
        s.alpha = 1.0;
        assert!(s.validate().is_err());
        let mut s = small_scenario(1);
        s.n_list = vec![3];
        assert!(matches!(s.validate(), Err(Error::SampleTooSmall { .. })));
        s.methods = vec![Method::Chatterjee];
        assert!(s.validate().is_ok());
        let t1 = Scenario::table1(500, 0);
        assert_eq!(t1.n_list.len() * t1.rho_rules.len() * t1.combos().len(), 45);
    }

    #[test]
    fn histogram_bookkeeping() {
        let bw = Bandwidths::default_powers(50).unwrap();
        let h = run_null_histogram(50, 100, KernelName::Epanechnikov, bw, 10, 3).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>() + h.underflow + h.overflow, 100);
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.edges.len(), 11);
        assert!(h.edges.windows(2).all(|e| e[0] < e[1]));
        assert_eq!((h.edges[0], h.edges[10]), (-4.0, 4.0));
        let mids: Vec<f64> = h.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        for (d, m) in h.normal_density_mid.iter().zip(mids) {
            assert!((d - (-m * m / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        }
        let csv = h.to_csv().unwrap();
        assert!(csv.starts_with("bin_lo,bin_hi,count,normal_density_mid\n"));
        assert_eq!(csv.lines().count(), 11);
        let side: serde_json::Value = serde_json::from_str(&h.sidecar_json().unwrap()).unwrap();
        assert_eq!(side["reps"], 100);
        assert_eq!(side["in_range"], 100);
        assert!(run_null_histogram(50, 99, KernelName::Epanechnikov, bw, 10, 3).is_err());
        assert!(run_null_histogram(50, 100, KernelName::Epanechnikov, bw, 9, 3).is_err());
    }

    #[test]
    fn ks_and_moments() {
        let xs: Vec<f64> = (1..=999).map(|i| quantile_unchecked(i as f64 / 1000.0)).collect();
        assert!(ks_distance_normal(&xs) < 1.5e-3);
        let (m, v, s) = moments(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(m, 4.0);
        assert!((v - 50.0 / 3.0).abs() < 1e-12);
        assert!(s > 0.0);
    }
}
