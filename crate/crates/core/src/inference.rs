//! One-sided asymptotic independence tests.
//!
//! Kernel test: reject when `Z = √(n/h₁)(r̂ₙ − bₙ)/(12σ₀)` exceeds the
//! standard normal `(1 − α)`-quantile. Chatterjee test: `Z = √n ξ̂ₙ / √(2/5)`.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{sigma0_sq_cached, Bandwidths, CenteringParts, CoefficientTables};
use crate::data::{rank_sample, PairedSample, TiePolicy};
use crate::error::{Error, Result};
use crate::estimators::{r_hat, tau2_pairsum_perm, xi_hat_perm};
use crate::format::{ser_opt_real, ser_real};
use crate::normal::{std_normal_quantile, std_normal_sf};
use crate::polykernels::KernelName;

pub use crate::normal::std_normal_cdf;

/// Null variance of `√n ξ̂ₙ`.
pub const CHATTERJEE_NULL_VARIANCE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kernel,
    Chatterjee,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kernel => "kernel",
            Method::Chatterjee => "chatterjee",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kernel" => Ok(Method::Kernel),
            "chatterjee" | "xi" => Ok(Method::Chatterjee),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Components {
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub tau2_hat: Option<f64>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub b_n: Option<f64>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub xi_hat: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub method: Method,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
    #[serde(serialize_with = "ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub h2: Option<f64>,
    #[serde(serialize_with = "ser_real")]
    pub statistic: f64,
    #[serde(serialize_with = "ser_real")]
    pub p_value: f64,
    #[serde(serialize_with = "ser_real")]
    pub alpha: f64,
    pub reject: bool,
    pub components: Components,
    pub ties: TiePolicy,
    pub warnings: Vec<String>,
}

/// Upper-tail critical value `u_{1−α}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    std_normal_quantile(1.0 - alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Everything the kernel test needs that does not depend on the data.
#[derive(Debug, Clone)]
pub struct KernelTestContext {
    tables: Arc<CoefficientTables>,
    kernel: KernelName,
    sigma0: f64,
    bhat: f64,
    b_n: f64,
    scale: f64,
}

/// Kernel statistic for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStatistic {
    pub tau2_hat: f64,
    pub r_hat: f64,
    pub z: f64,
}

impl KernelTestContext {
    pub fn new(n: usize, kernel: KernelName, bandwidths: Bandwidths) -> Result<Self> {
        if n < 4 {
            return Err(Error::SampleTooSmall { n, min: 4 });
        }
        let tables = CoefficientTables::cached(n, kernel, bandwidths)?;
        let bhat = CenteringParts::from_tables(&tables).bhat();
        Ok(KernelTestContext {
            tables,
            kernel,
            sigma0: sigma0_sq_cached(kernel).sqrt(),
            bhat,
            b_n: 6.0 * bhat - 2.0,
            scale: (n as f64 / bandwidths.h1).sqrt(),
        })
    }

    pub fn tables(&self) -> &CoefficientTables {
        &self.tables
    }

    pub fn kernel(&self) -> KernelName {
        self.kernel
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn b_n(&self) -> f64 {
        self.b_n
    }

    pub fn bhat(&self) -> f64 {
        self.bhat
    }

    /// `√(n/h₁)(r̂ − bₙ)/(12σ₀)`.
    pub fn z_from_r(&self, r: f64) -> f64 {
        self.scale * (r - self.b_n) / (12.0 * self.sigma0)
    }

    /// `√(n/h₁)(τ̂² − b̂ₙ)/(2σ₀)`, algebraically equal to [`Self::z_from_r`].
    pub fn z_from_tau2(&self, tau2: f64) -> f64 {
        self.scale * (tau2 - self.bhat) / (2.0 * self.sigma0)
    }

    /// Statistic for the permutation `π[R_i] = S_i` (1-based values).
    pub fn statistic(&self, pi: &[usize]) -> Result<KernelStatistic> {
        if pi.len() != self.tables.n() {
            return Err(Error::Config(format!(
                "kernel test prepared for n = {} but got n = {}",
                self.tables.n(),
                pi.len()
            )));
        }
        let tau2 = tau2_pairsum_perm(pi, &self.tables);
        let r = r_hat(tau2);
        let z = self.z_from_r(r);
        let z_tau = self.z_from_tau2(tau2);
        if (z - z_tau).abs() > 1e-12 * (1.0 + z.abs()) {
            return Err(Error::Internal(format!(
                "r-path statistic {z} and tau-path statistic {z_tau} disagree"
            )));
        }
        Ok(KernelStatistic {
            tau2_hat: tau2,
            r_hat: r,
            z,
        })
    }
}

/// `√n ξ̂ / √(2/5)` for the permutation `π[R_i] = S_i`.
pub fn chatterjee_statistic(pi: &[usize]) -> (f64, f64) {
    let xi = xi_hat_perm(pi);
    let z = (pi.len() as f64).sqrt() * xi / CHATTERJEE_NULL_VARIANCE.sqrt();
    (xi, z)
}

pub fn kernel_test(
    sample: &PairedSample,
    kernel: KernelName,
    bandwidths: Bandwidths,
    alpha: f64,
    ties: TiePolicy,
) -> Result<TestReport> {
    let crit = critical_value(alpha)?;
    let n = sample.n();
    if n < 4 {
        return Err(Error::SampleTooSmall { n, min: 4 });
    }
    let ranked = rank_sample(sample, ties)?;
    let ctx = KernelTestContext::new(n, kernel, bandwidths)?;
    let stat = ctx.statistic(&ranked.permutation())?;
    Ok(TestReport {
        method: Method::Kernel,
        n,
        kernel: Some(kernel),
        h1: Some(bandwidths.h1),
        h2: Some(bandwidths.h2),
        statistic: stat.z,
        p_value: std_normal_sf(stat.z),
        alpha,
        reject: stat.z > crit,
        components: Components {
            tau2_hat: Some(stat.tau2_hat),
            r_hat: Some(stat.r_hat),
            b_n: Some(ctx.b_n),
            sigma0: Some(ctx.sigma0),
            xi_hat: None,
        },
        ties,
        warnings: bandwidths.regime_warnings(n),
    })
}

pub fn chatterjee_test(sample: &PairedSample, alpha: f64, ties: TiePolicy) -> Result<TestReport> {
    let crit = critical_value(alpha)?;
    let n = sample.n();
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    let ranked = rank_sample(sample, ties)?;
    let (xi, z) = chatterjee_statistic(&ranked.permutation());
    Ok(TestReport {
        method: Method::Chatterjee,
        n,
        kernel: None,
        h1: None,
        h2: None,
        statistic: z,
        p_value: std_normal_sf(z),
        alpha,
        reject: z > crit,
        components: Components {
            xi_hat: Some(xi),
            ..Components::default()
        },
        ties,
        warnings: Vec::new(),
    })
}
