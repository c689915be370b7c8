//! Data-independent weights of the pair-sum representation
//!
//! ```text
//! τ̂²ₙ = 1/(n²h₁) Σᵢ Σⱼ a_{ij} B_{πᵢπⱼ}
//! a_{ij} = (1/h₁) ∫₀¹ K((u − i/n)/h₁) K((u − j/n)/h₁) du
//! B_{ij} = ∫₀¹ K̄((v − i/n)/h₂) K̄((v − j/n)/h₂) dv
//! ```
//!
//! together with the null centering terms and the limiting null variance σ₀².
//!
//! `a` vanishes outside the band `|i − j| ≤ ⌈2nh₁⌉`. Rows whose kernel window
//! stays inside `[0, 1]` depend on `|i − j|` only and share one profile; only
//! the boundary rows are stored explicitly. Outside the band `|i − j| ≤ ⌈2nh₂⌉`
//! the two `K̄` transitions are disjoint, so `B_{ij}` depends on `max(i, j)`
//! only and is read from a tail vector.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::polykernels::{integrate_product, Kernel, KernelName, PiecewisePolynomial};
use crate::quadrature::GaussRule;

/// How the bandwidths were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Explicit,
    /// `h₁ = n^{-0.3}`, `h₂ = n^{-0.8}`.
    DefaultPowers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandwidths {
    pub h1: f64,
    pub h2: f64,
    pub rule: BandwidthRule,
}

pub const DEFAULT_H1_EXPONENT: f64 = -0.3;
pub const DEFAULT_H2_EXPONENT: f64 = -0.8;

impl Bandwidths {
    pub fn explicit(h1: f64, h2: f64) -> Result<Self> {
        for (name, h) in [("h1", h1), ("h2", h2)] {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {h}")));
            }
        }
        Ok(Bandwidths {
            h1,
            h2,
            rule: BandwidthRule::Explicit,
        })
    }

    pub fn default_powers(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::SampleTooSmall { n, min: 2 });
        }
        let nf = n as f64;
        Ok(Bandwidths {
            h1: nf.powf(DEFAULT_H1_EXPONENT),
            h2: nf.powf(DEFAULT_H2_EXPONENT),
            rule: BandwidthRule::DefaultPowers,
        })
    }

    /// Warnings when the bandwidths look far from the asymptotic regime
    /// `nh₁² → ∞, nh₁⁴ → 0, nh₂ → ∞`. Never fatal.
    pub fn regime_warnings(&self, n: usize) -> Vec<String> {
        let nf = n as f64;
        let mut out = Vec::new();
        let (lo, hi) = (nf.powf(-0.49), nf.powf(-0.26));
        if self.h1 < lo || self.h1 > hi {
            out.push(format!(
                "h1 = {} lies outside [n^-0.49, n^-0.26] = [{lo:.6}, {hi:.6}]",
                self.h1
            ));
        }
        if self.h2 >= self.h1 {
            out.push(format!("h2 = {} is not smaller than h1 = {}", self.h2, self.h1));
        }
        if nf * self.h2 < 2.0 {
            out.push(format!("n*h2 = {} is below 2", nf * self.h2));
        }
        out
    }
}

fn check_index(i: usize, j: usize, n: usize) -> Result<()> {
    if i == 0 || j == 0 || i > n || j > n {
        return Err(Error::invalid(format!(
            "indices ({i}, {j}) out of range 1..={n}"
        )));
    }
    Ok(())
}

/// `∫_lo^hi K(x) K(x + d) dx` in the rescaled variable `x = (u − i/n)/h₁`.
fn kernel_overlap(kernel: &Kernel, d: f64, lo: f64, hi: f64) -> Result<f64> {
    let shifted = kernel.density().affine_compose(-d, 1.0)?;
    integrate_product(kernel.density(), &shifted, lo, hi)
}

fn a_value(i: usize, j: usize, n: usize, h1: f64, kernel: &Kernel) -> Result<f64> {
    let nf = n as f64;
    let xi = i as f64 / nf;
    let d = (i as f64 - j as f64) / (nf * h1);
    kernel_overlap(kernel, d, -xi / h1, (1.0 - xi) / h1)
}

/// `a_{ij} = (1/h₁) ∫₀¹ K((u − i/n)/h₁) K((u − j/n)/h₁) du`, exact.
pub fn a_coeff(i: usize, j: usize, n: usize, h1: f64, kernel: &Kernel) -> Result<f64> {
    check_index(i, j, n)?;
    if !(h1 > 0.0) {
        return Err(Error::invalid(format!("h1 must be positive, got {h1}")));
    }
    a_value(i, j, n, h1, kernel)
}

fn b_value(i: usize, j: usize, n: usize, h2: f64, kernel: &Kernel) -> Result<f64> {
    let nf = n as f64;
    let xi = i as f64 / nf;
    let d = (i as f64 - j as f64) / (nf * h2);
    let shifted = kernel.cdf().affine_compose(-d, 1.0)?;
    Ok(h2 * integrate_product(kernel.cdf(), &shifted, -xi / h2, (1.0 - xi) / h2)?)
}

/// `B_{ij} = ∫₀¹ K̄((v − i/n)/h₂) K̄((v − j/n)/h₂) dv`, exact.
pub fn b_coeff(i: usize, j: usize, n: usize, h2: f64, kernel: &Kernel) -> Result<f64> {
    check_index(i, j, n)?;
    if !(h2 > 0.0) {
        return Err(Error::invalid(format!("h2 must be positive, got {h2}")));
    }
    b_value(i, j, n, h2, kernel)
}

/// `∫₀¹ K̄((v − m/n)/h₂) dv`: the value of `B_{ij}` for `max(i, j) = m` once
/// the two transitions are disjoint.
fn b_tail_value(m: usize, n: usize, h2: f64, kernel: &Kernel) -> Result<f64> {
    let xm = m as f64 / n as f64;
    Ok(h2 * kernel.cdf().integrate(-xm / h2, (1.0 - xm) / h2)?)
}

fn half_width(n: usize, h: f64) -> usize {
    (2.0 * n as f64 * h).ceil() as usize
}

const ROW_MARGIN: f64 = 1e-12;

/// Upper band `f(i, i + k)`, `k = 0..=width`, for each listed row, flattened
/// row-major; entries past `n` are zero.
fn banded_rows(
    rows: &[usize],
    n: usize,
    width: usize,
    f: impl Fn(usize, usize) -> Result<f64> + Sync,
) -> Result<Vec<f64>> {
    let per_row: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| {
            (0..=width)
                .map(|k| if i + k <= n { f(i, i + k) } else { Ok(0.0) })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_row.concat())
}

/// Precomputed `a` and `B` tables for one `(n, kernel, h₁, h₂)`.
#[derive(Debug, Clone)]
pub struct CoefficientTables {
    n: usize,
    kernel: Kernel,
    bandwidths: Bandwidths,
    a_width: usize,
    a_eff: usize,
    /// `a_{i,i+k}` for rows whose window lies inside `[0, 1]`, `k = 0..=a_eff`.
    a_profile: Vec<f64>,
    /// Slot into `a_rows` per 1-based row; `usize::MAX` for interior rows.
    a_row_slot: Vec<usize>,
    a_rows: Vec<f64>,
    a_diag: Vec<f64>,
    b_width: usize,
    b_eff: usize,
    /// `B_{i,i+k}`, row-major with stride `b_eff + 1`.
    b_band: Vec<f64>,
    b_tail: Vec<f64>,
    b_diag: Vec<f64>,
    l: Vec<f64>,
    s1: f64,
    s2: f64,
    s3: f64,
    sum_b_offdiag: f64,
}

impl CoefficientTables {
    pub fn build(n: usize, kernel: &Kernel, bandwidths: Bandwidths) -> Result<Self> {
        if n < 4 {
            return Err(Error::SampleTooSmall { n, min: 4 });
        }
        let Bandwidths { h1, h2, .. } = bandwidths;
        if !(h1 > 0.0 && h1 < 1.0 && h2 > 0.0 && h2 < 1.0) {
            return Err(Error::invalid(format!(
                "bandwidths must lie in (0, 1), got h1 = {h1}, h2 = {h2}"
            )));
        }
        let nf = n as f64;

        let a_width = half_width(n, h1);
        let a_eff = a_width.min(n - 1);
        let a_profile = (0..=a_eff)
            .map(|k| {
                let d = -(k as f64) / (nf * h1);
                kernel_overlap(kernel, d, -2.0 + d, 2.0 - d)
            })
            .collect::<Result<Vec<_>>>()?;

        let boundary: Vec<usize> = (1..=n)
            .filter(|&i| {
                let xi = i as f64 / nf;
                !(xi >= h1 + ROW_MARGIN && xi + h1 <= 1.0 - ROW_MARGIN)
            })
            .collect();
        let mut a_row_slot = vec![usize::MAX; n + 1];
        for (slot, &i) in boundary.iter().enumerate() {
            a_row_slot[i] = slot;
        }
        let a_rows = banded_rows(&boundary, n, a_eff, |i, j| a_value(i, j, n, h1, kernel))?;

        let b_width = half_width(n, h2);
        let b_eff = b_width.min(n - 1);
        let all_rows: Vec<usize> = (1..=n).collect();
        let b_band = banded_rows(&all_rows, n, b_eff, |i, j| b_value(i, j, n, h2, kernel))?;
        let mut b_tail = vec![0.0; n + 1];
        for (m, slot) in b_tail.iter_mut().enumerate().skip(1) {
            *slot = b_tail_value(m, n, h2, kernel)?;
        }

        let mut tables = CoefficientTables {
            n,
            kernel: kernel.clone(),
            bandwidths,
            a_width,
            a_eff,
            a_profile,
            a_row_slot,
            a_rows,
            a_diag: Vec::new(),
            b_width,
            b_eff,
            b_band,
            b_tail,
            b_diag: Vec::new(),
            l: Vec::new(),
            s1: 0.0,
            s2: 0.0,
            s3: 0.0,
            sum_b_offdiag: 0.0,
        };
        tables.a_diag = (1..=n).map(|i| tables.a(i, i)).collect();
        tables.b_diag = (1..=n).map(|i| tables.b(i, i)).collect();

        let mut l = vec![0.0; n];
        let mut s1 = 0.0;
        for i in 1..=n {
            for k in 1..=a_eff.min(n - i) {
                let v = tables.a(i, i + k);
                l[i - 1] += v;
                l[i + k - 1] += v;
                s1 += 2.0 * v * v;
            }
        }
        tables.s2 = l.iter().map(|v| v * v).sum();
        tables.s3 = l.iter().sum();
        tables.s1 = s1;
        tables.l = l;

        let mut band_sum = 0.0;
        for i in 1..=n {
            for k in 1..=b_eff.min(n - i) {
                band_sum += tables.b_band[(i - 1) * (b_eff + 1) + k];
            }
        }
        let tail_sum: f64 = (1..=n)
            .map(|m| (m - 1).saturating_sub(b_eff) as f64 * tables.b_tail[m])
            .sum();
        tables.sum_b_offdiag = 2.0 * (band_sum + tail_sum);
        Ok(tables)
    }

    /// Shared, lazily built tables. Concurrent callers may build the same
    /// table twice; the first insertion wins.
    pub fn cached(n: usize, kernel: KernelName, bandwidths: Bandwidths) -> Result<Arc<Self>> {
        type Key = (usize, KernelName, u64, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<CoefficientTables>>>> = OnceLock::new();
        let key = (n, kernel, bandwidths.h1.to_bits(), bandwidths.h2.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("table cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let built = Arc::new(Self::build(n, &Kernel::new(kernel), bandwidths)?);
        let mut guard = cache.lock().expect("table cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(built)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn bandwidths(&self) -> Bandwidths {
        self.bandwidths
    }

    /// `⌈2nh₁⌉`: `a_{ij} = 0` whenever `|i − j|` exceeds it.
    pub fn a_half_width(&self) -> usize {
        self.a_width
    }

    /// `⌈2nh₂⌉`: beyond it `B_{ij}` equals the tail value at `max(i, j)`.
    pub fn b_half_width(&self) -> usize {
        self.b_width
    }

    /// Stored `B` band width, `min(⌈2nh₂⌉, n − 1)`.
    pub fn b_band_limit(&self) -> usize {
        self.b_eff
    }

    /// Band width actually iterated, `min(⌈2nh₁⌉, n − 1)`.
    pub fn a_band_limit(&self) -> usize {
        self.a_eff
    }

    /// `a_{ij}` (1-based indices).
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.a_eff {
            return 0.0;
        }
        match self.a_row_slot[lo] {
            usize::MAX => self.a_profile[k],
            slot => self.a_rows[slot * (self.a_eff + 1) + k],
        }
    }

    /// `B_{ij}` (1-based indices).
    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.b_eff {
            self.b_tail[hi]
        } else {
            self.b_band[(lo - 1) * (self.b_eff + 1) + k]
        }
    }

    pub fn a_diag(&self) -> &[f64] {
        &self.a_diag
    }

    pub fn b_diag(&self) -> &[f64] {
        &self.b_diag
    }

    /// Tail values `t(m)`, indexed by `m = 1..=n` (entry 0 unused).
    pub fn b_tail(&self) -> &[f64] {
        &self.b_tail
    }

    /// `L_i = Σ_{j≠i} a_{ij}`, 0-based storage.
    pub fn l(&self) -> &[f64] {
        &self.l
    }

    /// `S₁ = Σ_{i≠j} a²_{ij}`.
    pub fn s1(&self) -> f64 {
        self.s1
    }

    /// `S₂ = Σ L²_i`.
    pub fn s2(&self) -> f64 {
        self.s2
    }

    /// `S₃ = Σ L_i`.
    pub fn s3(&self) -> f64 {
        self.s3
    }

    /// `Σ_{i≠j} B_{ij}` via the band/tail decomposition.
    pub fn sum_b_offdiag(&self) -> f64 {
        self.sum_b_offdiag
    }

    /// `b̄ = Σ_{i≠j} B_{ij} / (n(n−1))`.
    pub fn b_bar(&self) -> f64 {
        let nf = self.n as f64;
        self.sum_b_offdiag / (nf * (nf - 1.0))
    }

    /// Number of stored non-zero `a` entries (both triangles and diagonal).
    pub fn a_nonzero_count(&self) -> usize {
        let mut count = 0;
        for i in 1..=self.n {
            for j in i.saturating_sub(self.a_eff).max(1)..=(i + self.a_eff).min(self.n) {
                if self.a(i, j) != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// The pieces of `b̂ₙ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenteringParts {
    /// `(1/(n²h₁²)) Σ_{i≠j} ∫₀¹ K K du = S₃/(n²h₁)`.
    #[serde(serialize_with = "crate::format::ser_real")]
    pub offdiag_kernel_factor: f64,
    /// `b̄`, the off-diagonal average of `B`.
    #[serde(serialize_with = "crate::format::ser_real")]
    pub offdiag_b_mean: f64,
    /// `(1/(n²h₁²)) Σᵢ ∫₀¹ K² du = Σ a_{ii}/(n²h₁)`.
    #[serde(serialize_with = "crate::format::ser_real")]
    pub diag_kernel_factor: f64,
    /// `(1/n) Σᵢ B_{ii}`.
    #[serde(serialize_with = "crate::format::ser_real")]
    pub diag_b_mean: f64,
}

impl CenteringParts {
    pub fn from_tables(t: &CoefficientTables) -> Self {
        let nf = t.n as f64;
        let scale = nf * nf * t.bandwidths.h1;
        CenteringParts {
            offdiag_kernel_factor: t.s3 / scale,
            offdiag_b_mean: t.b_bar(),
            diag_kernel_factor: t.a_diag.iter().sum::<f64>() / scale,
            diag_b_mean: t.b_diag.iter().sum::<f64>() / nf,
        }
    }

    pub fn bhat(&self) -> f64 {
        self.offdiag_kernel_factor * self.offdiag_b_mean + self.diag_kernel_factor * self.diag_b_mean
    }
}

/// `b̂ₙ`, the null centering of `τ̂²ₙ`.
pub fn centering_bhat(tables: &CoefficientTables) -> f64 {
    CenteringParts::from_tables(tables).bhat()
}

/// `bₙ = 6 b̂ₙ − 2`, the null centering of `r̂ₙ`.
pub fn centering_bn(tables: &CoefficientTables) -> f64 {
    6.0 * centering_bhat(tables) - 2.0
}

/// `S₃ = Σᵢ Σ_{j≠i} a_{ij}` without building the `B` tables.
pub fn a_offdiag_sum(n: usize, h1: f64, kernel: &Kernel) -> Result<f64> {
    let w = half_width(n, h1).min(n.saturating_sub(1));
    let mut s = 0.0;
    for i in 1..=n {
        for j in i + 1..=(i + w).min(n) {
            s += a_value(i, j, n, h1, kernel)?;
        }
    }
    Ok(2.0 * s)
}

/// `b̃ₙ = 2(n−2)/(n³h₁²) Σᵢ Σ_{j≠i} ∫₀¹ K K du − 2`: `bₙ` with the `B`
/// average replaced by its `h₂ → 0` limit `(n−2)/(3n)` and the diagonal
/// dropped. Boundary truncation of the `u`-integral is kept.
pub fn centering_surrogate(n: usize, h1: f64, kernel: &Kernel) -> Result<f64> {
    if n < 3 {
        return Err(Error::SampleTooSmall { n, min: 3 });
    }
    if !(h1 > 0.0 && h1 < 1.0) {
        return Err(Error::invalid(format!("h1 must lie in (0, 1), got {h1}")));
    }
    let nf = n as f64;
    let s3 = a_offdiag_sum(n, h1, kernel)?;
    Ok(2.0 * (nf - 2.0) * s3 / (nf * nf * nf * h1) - 2.0)
}

/// `ψ(t) = ∫_{−t}^{1} K(v) K̄(v + t) dv`, exact for each `t`.
pub fn psi(kernel: &Kernel, t: f64) -> Result<f64> {
    let shifted: PiecewisePolynomial = kernel.cdf().affine_compose(-t, 1.0)?;
    integrate_product(kernel.density(), &shifted, -t, 1.0)
}

const SIGMA0_GL_ORDER: usize = 16;
const SIGMA0_MAX_LEVEL: u32 = 16;
pub const SIGMA0_DEFAULT_TOL: f64 = 1e-10;

/// `σ₀² = (2/45) ∫₀¹ (1 − ψ(t))² dt`.
///
/// `ψ` is evaluated exactly; the outer integral uses composite 16-point
/// Gauss–Legendre on segments split where kernel knots cross the integration
/// limits, halving panels until two successive levels agree within `tol`.
pub fn sigma0_sq(kernel: &Kernel, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let knots = kernel.knots();
    let mut cuts = vec![0.0, 1.0];
    for &a in knots {
        for &b in knots {
            cuts.push(b - a);
        }
        cuts.push(-a);
        cuts.push(a - 1.0);
    }
    cuts.retain(|&t| (0.0..=1.0).contains(&t));
    cuts.sort_unstable_by(f64::total_cmp);
    cuts.dedup();

    let rule = GaussRule::new(SIGMA0_GL_ORDER);
    let integrand = |t: f64| psi(kernel, t).map(|p| (1.0 - p) * (1.0 - p));
    let level_sum = |level: u32| -> Result<f64> {
        let parts = 1usize << level;
        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let h = (seg[1] - seg[0]) / parts as f64;
            for p in 0..parts {
                let a = seg[0] + p as f64 * h;
                for (t, w) in rule.mapped(a, a + h) {
                    total += w * integrand(t)?;
                }
            }
        }
        Ok(2.0 / 45.0 * total)
    };

    let mut prev = level_sum(0)?;
    for level in 1..=SIGMA0_MAX_LEVEL {
        let cur = level_sum(level)?;
        if (cur - prev).abs() < tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!(
        "sigma0^2 did not reach tolerance {tol} after {SIGMA0_MAX_LEVEL} refinements"
    )))
}

/// `σ₀²` at the default tolerance, computed once per kernel.
pub fn sigma0_sq_cached(kernel: KernelName) -> f64 {
    static CACHE: [OnceLock<f64>; 2] = [OnceLock::new(), OnceLock::new()];
    let slot = match kernel {
        KernelName::Epanechnikov => 0,
        KernelName::Triangular => 1,
    };
    *CACHE[slot].get_or_init(|| {
        sigma0_sq(&Kernel::new(kernel), SIGMA0_DEFAULT_TOL)
            .expect("sigma0^2 converges for catalog kernels")
    })
}
