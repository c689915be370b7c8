//! Exhaustive-permutation checks of the null decomposition
//!
//! ```text
//! Sₙ = 1/(n²h₁) Σ_{i≠j} a_{ij} B_{πᵢπⱼ} = Dₙ + 2Tₙ − Cₙ
//! Tₙ = 1/(n²h₁) Σᵢ b̄_{πᵢ} Lᵢ
//! Dₙ = 1/(n²h₁) Σ_{i≠j} a_{ij} b_{πᵢπⱼ},   b_{ij} = B_{ij} − b̄ᵢ − b̄ⱼ + b̄
//! Cₙ = b̄ S₃ / (n²h₁)
//! ```
//!
//! and of the closed-form variance of `Dₙ`.
//!
//! With `b̄ᵢ = (1/(n−1)) Σ_{k≠i} B_{ik}` the rows of `b` sum to `b̄ᵢ − b̄`,
//! not zero, and the closed-form variance is then not exact. The array
//! `b*_{ij} = B_{ij} − (Rᵢ + Rⱼ)/(n−2) + R/((n−1)(n−2))` (row sums `Rᵢ`,
//! total `R`) has zero row sums; its `D*ₙ` is carried alongside so both can
//! be compared with the formula.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{centering_bhat, CoefficientTables};
use crate::error::{Error, Result};
use crate::format::ser_real;

/// Largest `n` for which all `n!` permutations are enumerated.
pub const MAX_ENUMERATION_N: usize = 8;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn compensated(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Dense `B`, its centred version and the derived constants.
#[derive(Debug, Clone)]
pub struct DecompositionTables {
    n: usize,
    h1: f64,
    a: Vec<f64>,
    l: Vec<f64>,
    b_matrix: Vec<f64>,
    b_centered: Vec<f64>,
    b_bar_i: Vec<f64>,
    b_bar: f64,
    mu2: f64,
    b_row_centered: Vec<f64>,
    mu2_row_centered: f64,
    c_n: f64,
}

impl DecompositionTables {
    pub fn new(tables: &CoefficientTables) -> Self {
        let n = tables.n();
        let nf = n as f64;
        let mut b_matrix = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                b_matrix[(i - 1) * n + j - 1] = tables.b(i, j);
            }
        }
        let b_bar_i: Vec<f64> = (0..n)
            .map(|i| compensated((0..n).filter(|&k| k != i).map(|k| b_matrix[i * n + k])) / (nf - 1.0))
            .collect();
        let b_bar = compensated(b_bar_i.iter().copied()) / nf;
        let mut b_centered = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    b_centered[i * n + j] = b_matrix[i * n + j] - b_bar_i[i] - b_bar_i[j] + b_bar;
                }
            }
        }
        let mu2 = compensated(b_centered.iter().map(|v| v * v)) / (nf * (nf - 1.0));
        let total = b_bar * nf * (nf - 1.0);
        let mut b_row_centered = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (ri, rj) = (b_bar_i[i] * (nf - 1.0), b_bar_i[j] * (nf - 1.0));
                    b_row_centered[i * n + j] = b_matrix[i * n + j] - (ri + rj) / (nf - 2.0)
                        + total / ((nf - 1.0) * (nf - 2.0));
                }
            }
        }
        let mu2_row_centered =
            compensated(b_row_centered.iter().map(|v| v * v)) / (nf * (nf - 1.0));
        let h1 = tables.bandwidths().h1;
        let w = tables.a_band_limit();
        let mut a = vec![0.0; n * n];
        for i in 1..=n {
            for j in i.saturating_sub(w).max(1)..=(i + w).min(n) {
                a[(i - 1) * n + j - 1] = tables.a(i, j);
            }
        }
        DecompositionTables {
            n,
            h1,
            a,
            l: tables.l().to_vec(),
            b_matrix,
            b_centered,
            b_bar_i,
            b_bar,
            mu2,
            b_row_centered,
            mu2_row_centered,
            c_n: b_bar * tables.s3() / (nf * nf * h1),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `B_{ij}`, 1-based.
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b_matrix[(i - 1) * self.n + j - 1]
    }

    /// `b_{ij}` for `i ≠ j` (zero on the diagonal), 1-based.
    pub fn b_centered(&self, i: usize, j: usize) -> f64 {
        self.b_centered[(i - 1) * self.n + j - 1]
    }

    pub fn b_bar_i(&self) -> &[f64] {
        &self.b_bar_i
    }

    pub fn b_bar(&self) -> f64 {
        self.b_bar
    }

    /// `μ₂ = (1/(n(n−1))) Σ_{i≠j} b²_{ij}`.
    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    /// `b*_{ij}` (zero row sums), 1-based; zero on the diagonal.
    pub fn b_row_centered(&self, i: usize, j: usize) -> f64 {
        self.b_row_centered[(i - 1) * self.n + j - 1]
    }

    /// `(1/(n(n−1))) Σ_{i≠j} b*²_{ij}`.
    pub fn mu2_row_centered(&self) -> f64 {
        self.mu2_row_centered
    }

    /// `Σ_{j≠i} b_{ij}` for each row (1-based `i` at index `i − 1`).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| compensated(self.b_centered[i * self.n..(i + 1) * self.n].iter().copied()))
            .collect()
    }

    /// `Sₙ`, `Tₙ`, `Dₙ` and the diagonal term for one permutation (1-based).
    pub fn terms(&self, pi: &[usize]) -> PermTerms {
        let n = self.n;
        debug_assert_eq!(pi.len(), n);
        let scale = (n * n) as f64 * self.h1;
        let (mut s, mut d, mut d_star, mut diag, mut t) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let pi_i = pi[i] - 1;
            let a_row = &self.a[i * n..(i + 1) * n];
            let b_row = &self.b_matrix[pi_i * n..(pi_i + 1) * n];
            let c_row = &self.b_centered[pi_i * n..(pi_i + 1) * n];
            let r_row = &self.b_row_centered[pi_i * n..(pi_i + 1) * n];
            for (j, &aij) in a_row.iter().enumerate() {
                if aij == 0.0 {
                    continue;
                }
                let pj = pi[j] - 1;
                if j == i {
                    diag += aij * b_row[pj];
                } else {
                    s += aij * b_row[pj];
                    d += aij * c_row[pj];
                    d_star += aij * r_row[pj];
                }
            }
            t += self.b_bar_i[pi_i] * self.l[i];
        }
        PermTerms {
            s: s / scale,
            t: t / scale,
            d: d / scale,
            d_row_centered: d_star / scale,
            diag: diag / scale,
        }
    }

    /// `Tₙ` alone, in `O(n)`.
    pub fn t_term(&self, pi: &[usize]) -> f64 {
        let scale = (self.n * self.n) as f64 * self.h1;
        pi.iter().zip(&self.l).map(|(&p, &l)| self.b_bar_i[p - 1] * l).sum::<f64>() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermTerms {
    pub s: f64,
    pub t: f64,
    pub d: f64,
    /// `D*ₙ`, built from the zero-row-sum array.
    pub d_row_centered: f64,
    /// `1/(n²h₁) Σᵢ a_{ii} B_{πᵢπᵢ}`, so that `τ̂² = s + diag`.
    pub diag: f64,
}

/// Exact null moments over all `n!` permutations.
#[derive(Debug, Clone, Serialize)]
pub struct NullMoments {
    pub n: usize,
    pub permutations: u64,
    #[serde(serialize_with = "ser_real")]
    pub mean_s: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_s: f64,
    #[serde(serialize_with = "ser_real")]
    pub mean_t: f64,
    #[serde(serialize_with = "ser_real")]
    pub mean_d: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_d: f64,
    #[serde(serialize_with = "ser_real")]
    pub mean_d_row_centered: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_d_row_centered: f64,
    #[serde(serialize_with = "ser_real")]
    pub c_n: f64,
    #[serde(serialize_with = "ser_real")]
    pub mean_tau2: f64,
    /// `b̂ₙ` from the coefficient tables, to compare with `mean_tau2`.
    #[serde(serialize_with = "ser_real")]
    pub b_hat_n_check: f64,
}

/// All permutations of `1..=n` starting with `first`, in lexicographic order.
fn permutations_with_first(n: usize, first: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut rest: Vec<usize> = (1..=n).filter(|&v| v != first).collect();
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let mut out = Vec::with_capacity(n);
        out.push(first);
        out.extend_from_slice(&rest);
        done = !next_permutation(&mut rest);
        Some(out)
    })
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Enumerate all `n!` permutations (`4 ≤ n ≤ 8`). Blocks keyed by `π₁` run
/// in parallel and are concatenated in order, so results do not depend on
/// the worker count.
pub fn enumerate_null(tables: &CoefficientTables) -> Result<NullMoments> {
    let n = tables.n();
    if n > MAX_ENUMERATION_N {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_N,
        });
    }
    let dec = DecompositionTables::new(tables);
    let blocks: Vec<Vec<PermTerms>> = (1..=n)
        .into_par_iter()
        .map(|first| permutations_with_first(n, first).map(|p| dec.terms(&p)).collect())
        .collect();
    let all: Vec<PermTerms> = blocks.concat();
    let count = all.len() as f64;
    let mean = |f: &dyn Fn(&PermTerms) -> f64| compensated(all.iter().map(f)) / count;
    let var = |f: &dyn Fn(&PermTerms) -> f64, m: f64| {
        compensated(all.iter().map(|x| (f(x) - m).powi(2))) / count
    };
    let mean_s = mean(&|x| x.s);
    let mean_d = mean(&|x| x.d);
    let mean_d_star = mean(&|x| x.d_row_centered);
    Ok(NullMoments {
        n,
        permutations: all.len() as u64,
        mean_s,
        var_s: var(&|x| x.s, mean_s),
        mean_t: mean(&|x| x.t),
        mean_d,
        var_d: var(&|x| x.d, mean_d),
        mean_d_row_centered: mean_d_star,
        var_d_row_centered: var(&|x| x.d_row_centered, mean_d_star),
        c_n: dec.c_n,
        mean_tau2: mean(&|x| x.s + x.diag),
        b_hat_n_check: centering_bhat(tables),
    })
}

/// `{2S₁ − 4(S₂ − S₁)/(n−2) + 2(S₃² + 2S₁ − 4S₂)/((n−2)(n−3))} / (n²h₁)²`,
/// the factor multiplying `μ₂` in the variance formula.
pub fn var_d_factor(tables: &CoefficientTables) -> Result<f64> {
    let n = tables.n();
    if n < 4 {
        return Err(Error::invalid(format!("variance formula needs n >= 4, got {n}")));
    }
    let nf = n as f64;
    let (s1, s2, s3) = (tables.s1(), tables.s2(), tables.s3());
    let brace = 2.0 * s1 - 4.0 * (s2 - s1) / (nf - 2.0)
        + 2.0 * (s3 * s3 + 2.0 * s1 - 4.0 * s2) / ((nf - 2.0) * (nf - 3.0));
    let scale = nf * nf * tables.bandwidths().h1;
    Ok(brace / (scale * scale))
}

/// `Var(Dₙ) = μ₂ {2S₁ − 4(S₂ − S₁)/(n−2) + 2(S₃² + 2S₁ − 4S₂)/((n−2)(n−3))} / (n²h₁)²`
/// with `μ₂` from the displayed centring `b_{ij} = B_{ij} − b̄ᵢ − b̄ⱼ + b̄`.
pub fn var_d_formula(tables: &CoefficientTables, dec: &DecompositionTables) -> Result<f64> {
    Ok(dec.mu2 * var_d_factor(tables)?)
}

/// The same formula with `μ₂` of the zero-row-sum array `b*`; exact for
/// `Var(D*ₙ)`.
pub fn var_d_formula_row_centered(
    tables: &CoefficientTables,
    dec: &DecompositionTables,
) -> Result<f64> {
    Ok(dec.mu2_row_centered * var_d_factor(tables)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mu2TwoWays {
    #[serde(serialize_with = "ser_real")]
    pub closed_form: f64,
    #[serde(serialize_with = "ser_real")]
    pub direct: f64,
}

/// `μ₂` from `[Σ_{i≠j} B²_{ij} − 2n Σ b̄ᵢ² + n(n+1) b̄²] / (n(n−1))` and from
/// the centred entries directly.
pub fn mu2_two_ways(dec: &DecompositionTables) -> Mu2TwoWays {
    let n = dec.n;
    let nf = n as f64;
    let sum_b2 = compensated(
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| dec.b_matrix[i * n + j].powi(2)),
    );
    let sum_bar2 = compensated(dec.b_bar_i.iter().map(|v| v * v));
    let closed = (sum_b2 - 2.0 * nf * sum_bar2 + nf * (nf + 1.0) * dec.b_bar * dec.b_bar)
        / (nf * (nf - 1.0));
    Mu2TwoWays {
        closed_form: closed,
        direct: dec.mu2,
    }
}

/// Row means of `B` and the `μ₂` closed forms, in `O(n ⌈2nh₂⌉)` from the
/// band/tail tables (no dense matrix).
#[derive(Debug, Clone)]
pub struct CenteredMoments {
    n: usize,
    b_bar_i: Vec<f64>,
    b_bar: f64,
    sum_b2: f64,
}

impl CenteredMoments {
    pub fn new(tables: &CoefficientTables) -> Self {
        let n = tables.n();
        let nf = n as f64;
        let w = tables.b_band_limit();
        let tail = tables.b_tail();
        let mut suffix = vec![0.0; n + 2];
        for m in (1..=n).rev() {
            suffix[m] = suffix[m + 1] + tail[m];
        }
        let mut row = vec![0.0; n];
        let mut band_sq = 0.0;
        for i in 1..=n {
            for k in i + 1..=(i + w).min(n) {
                let v = tables.b(i, k);
                row[i - 1] += v;
                row[k - 1] += v;
                band_sq += v * v;
            }
            row[i - 1] += (i - 1).saturating_sub(w) as f64 * tail[i];
            if i + w < n {
                row[i - 1] += suffix[i + w + 1];
            }
        }
        let tail_sq: f64 = (1..=n)
            .map(|m| (m - 1).saturating_sub(w) as f64 * tail[m] * tail[m])
            .sum();
        let b_bar_i: Vec<f64> = row.iter().map(|r| r / (nf - 1.0)).collect();
        let b_bar = row.iter().sum::<f64>() / (nf * (nf - 1.0));
        CenteredMoments {
            n,
            b_bar_i,
            b_bar,
            sum_b2: 2.0 * (band_sq + tail_sq),
        }
    }

    pub fn b_bar_i(&self) -> &[f64] {
        &self.b_bar_i
    }

    pub fn b_bar(&self) -> f64 {
        self.b_bar
    }

    /// `Σ_{i≠j} B²_{ij}`.
    pub fn sum_b2(&self) -> f64 {
        self.sum_b2
    }

    /// `[Σ_{i≠j} B²_{ij} − 2n Σ b̄ᵢ² + n(n+1) b̄²] / (n(n−1))`.
    pub fn mu2(&self) -> f64 {
        let nf = self.n as f64;
        let sum_bar2: f64 = self.b_bar_i.iter().map(|v| v * v).sum();
        (self.sum_b2 - 2.0 * nf * sum_bar2 + nf * (nf + 1.0) * self.b_bar * self.b_bar)
            / (nf * (nf - 1.0))
    }

    /// `[Σ_{i≠j} B²_{ij} − 2 Σ Rᵢ²/(n−2) + R²/((n−1)(n−2))] / (n(n−1))`, the
    /// mean square of the zero-row-sum array.
    pub fn mu2_row_centered(&self) -> f64 {
        let nf = self.n as f64;
        let sum_r2: f64 = self.b_bar_i.iter().map(|v| (v * (nf - 1.0)).powi(2)).sum();
        let total = self.b_bar * nf * (nf - 1.0);
        (self.sum_b2 - 2.0 * sum_r2 / (nf - 2.0) + total * total / ((nf - 1.0) * (nf - 2.0)))
            / (nf * (nf - 1.0))
    }

    /// `Cₙ = b̄ S₃/(n²h₁)`.
    pub fn c_n(&self, tables: &CoefficientTables) -> f64 {
        let nf = self.n as f64;
        self.b_bar * tables.s3() / (nf * nf * tables.bandwidths().h1)
    }

    /// Exact variance of `Tₙ` under a uniform permutation:
    /// `Σ(b̄ᵢ − b̄)² Σ(Lᵢ − L̄)² / ((n − 1)(n²h₁)²)`.
    pub fn var_t(&self, tables: &CoefficientTables) -> f64 {
        let nf = self.n as f64;
        let l = tables.l();
        let l_mean = l.iter().sum::<f64>() / nf;
        let sb: f64 = self.b_bar_i.iter().map(|b| (b - self.b_bar).powi(2)).sum();
        let sl: f64 = l.iter().map(|x| (x - l_mean).powi(2)).sum();
        sb * sl / (nf - 1.0) / (nf * nf * tables.bandwidths().h1).powi(2)
    }

    /// `Tₙ = 1/(n²h₁) Σᵢ b̄_{πᵢ} Lᵢ` for a permutation (1-based values).
    pub fn t_term(&self, tables: &CoefficientTables, pi: &[usize]) -> f64 {
        let nf = self.n as f64;
        pi.iter()
            .zip(tables.l())
            .map(|(&p, &l)| self.b_bar_i[p - 1] * l)
            .sum::<f64>()
            / (nf * nf * tables.bandwidths().h1)
    }
}

/// Full oracle comparison for one table.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub moments: NullMoments,
    #[serde(serialize_with = "ser_real")]
    pub var_d_formula: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_d_relative_error: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_d_row_centered_formula: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_d_row_centered_relative_error: f64,
    pub mu2: Mu2TwoWays,
    #[serde(serialize_with = "ser_real")]
    pub mu2_row_centered: f64,
    #[serde(serialize_with = "ser_real")]
    pub max_abs_row_sum_b_centered: f64,
}

pub fn oracle_report(tables: &CoefficientTables) -> Result<OracleReport> {
    let moments = enumerate_null(tables)?;
    let dec = DecompositionTables::new(tables);
    let formula = var_d_formula(tables, &dec)?;
    let formula_star = var_d_formula_row_centered(tables, &dec)?;
    let max_row = dec.row_sums().into_iter().map(f64::abs).fold(0.0, f64::max);
    Ok(OracleReport {
        var_d_relative_error: (formula - moments.var_d).abs() / moments.var_d.abs(),
        var_d_formula: formula,
        var_d_row_centered_relative_error: (formula_star - moments.var_d_row_centered).abs()
            / moments.var_d_row_centered.abs(),
        var_d_row_centered_formula: formula_star,
        mu2: mu2_two_ways(&dec),
        mu2_row_centered: dec.mu2_row_centered,
        max_abs_row_sum_b_centered: max_row,
        moments,
    })
}
