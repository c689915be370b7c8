//! Non-null asymptotic variance `σ² = Var(Z₁ − Z₂ − Z₃)` for explicit copulas.
//!
//! With `τ = ∂₁C` and `I = ∫∫ τ²`:
//!
//! ```text
//! Var Z₁      = ∫ τ(s, v∧w) τ(s, v) τ(s, w) − I²
//! Var Z₂      = [∫_u (∫_v τ²)² − I²] / 4
//! Var Z₃      = [∫_v (∫_u τ²)² − I²] / 4
//! 2 Cov(Z₁,Z₂) = −∫_u (∫_v τ²)² + I²
//! 2 Cov(Z₁,Z₃) = −∫ τ²(u, y) τ(x, w) ∂₂τ(x, y) 1{y ≤ w} + I²
//! 2 Cov(Z₂,Z₃) = [∫ ∂₂τ(u, v) (∫ τ²(u, ·)) (∫ τ²(·, v)) − I²] / 2
//! σ² = Var Z₁ + Var Z₂ + Var Z₃ − 2Cov(Z₁,Z₂) − 2Cov(Z₁,Z₃) + 2Cov(Z₂,Z₃)
//! ```
//!
//! All integrals use tensor Gauss–Legendre rules on the open unit cube.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::ser_real;
use crate::normal::{std_normal_cdf, std_normal_quantile};
use crate::quadrature::GaussRule;

/// A copula given through `τ(u, v) = ∂₁C(u, v)` and `∂₂τ(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CopulaModel {
    /// `C(u, v) = uv`.
    Independence,
    /// Gaussian copula with correlation `rho`, `|rho| < 1`.
    Gaussian { rho: f64 },
}

/// Gaussian copula model; `|rho| < 1`.
pub fn gaussian_copula_model(rho: f64) -> Result<CopulaModel> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("Gaussian copula needs |rho| < 1, got {rho}")));
    }
    Ok(CopulaModel::Gaussian { rho })
}

fn finite(x: f64, u: f64, v: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Model { u, v })
    }
}

impl CopulaModel {
    pub fn name(&self) -> &'static str {
        match self {
            CopulaModel::Independence => "independence",
            CopulaModel::Gaussian { .. } => "gaussian",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            CopulaModel::Independence => None,
            CopulaModel::Gaussian { rho } => Some(*rho),
        }
    }

    /// `τ(u, v)`, the conditional distribution of `V` given `U = u`.
    pub fn tau(&self, u: f64, v: f64) -> Result<f64> {
        match *self {
            CopulaModel::Independence => Ok(v),
            CopulaModel::Gaussian { rho } => {
                let (zu, q) = (std_normal_quantile(u)?, std_normal_quantile(v)?);
                let s = (1.0 - rho * rho).sqrt();
                finite(std_normal_cdf((q - rho * zu) / s), u, v)
            }
        }
    }

    /// `∂₂τ(u, v)`, the copula density.
    pub fn d2tau(&self, u: f64, v: f64) -> Result<f64> {
        match *self {
            CopulaModel::Independence => Ok(1.0),
            CopulaModel::Gaussian { rho } => {
                let (zu, q) = (std_normal_quantile(u)?, std_normal_quantile(v)?);
                let s = (1.0 - rho * rho).sqrt();
                let z = (q - rho * zu) / s;
                finite((-(z * z - q * q) / 2.0).exp() / s, u, v)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceBreakdown {
    pub model: &'static str,
    #[serde(serialize_with = "crate::format::ser_opt_real", skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(serialize_with = "ser_real")]
    pub var_z1: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_z2: f64,
    #[serde(serialize_with = "ser_real")]
    pub var_z3: f64,
    /// `2 Cov(Z₁, Z₂)`.
    #[serde(serialize_with = "ser_real")]
    pub cov12_x2: f64,
    /// `2 Cov(Z₁, Z₃)`.
    #[serde(serialize_with = "ser_real")]
    pub cov13_x2: f64,
    /// `2 Cov(Z₂, Z₃)`.
    #[serde(serialize_with = "ser_real")]
    pub cov23_x2: f64,
    #[serde(serialize_with = "ser_real")]
    pub sigma_sq: f64,
    /// `∫∫ τ²`.
    #[serde(serialize_with = "ser_real")]
    pub tau_sq_integral: f64,
    pub nodes_3d: usize,
    pub nodes_4d: usize,
}

impl VarianceBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [
            self.var_z1,
            self.var_z2,
            self.var_z3,
            self.cov12_x2,
            self.cov13_x2,
            self.cov23_x2,
        ]
    }
}

/// Sum of `f(i)` over `0..len`, evaluated in parallel and added in index order.
fn ordered_sum(len: usize, f: impl Fn(usize) -> Result<f64> + Sync + Send) -> Result<f64> {
    let parts: Vec<f64> = (0..len).into_par_iter().map(f).collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// Gauss–Legendre nodes on `(lo, hi)` after the substitution
/// `x = lo + (hi − lo)·S(t)`, `S(t) = t³(10 − 15t + 6t²)`. The Jacobian
/// `30t²(1 − t)²` flattens the logarithmic boundary layers of the Gaussian
/// model, which otherwise limit plain Gauss–Legendre to about `O(N⁻²)`.
fn mapped(rule: &GaussRule, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let len = hi - lo;
    let step = |t: f64| t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    rule.mapped(0.0, 1.0).map(move |(t, w)| {
        let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        // S(1 − t) = 1 − S(t); map each half from its own end to stay interior
        let x = if t <= 0.5 { lo + len * step(t) } else { hi - len * step(1.0 - t) };
        (x, w * len * ds)
    })
    // on very short intervals a node can round onto an endpoint; its weight is negligible
    .filter(move |&(x, _)| x > lo && x < hi)
}

/// `∫ g` over `(lo, hi)`.
fn integrate(rule: &GaussRule, lo: f64, hi: f64, mut g: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for (x, w) in mapped(rule, lo, hi) {
        acc += w * g(x)?;
    }
    Ok(acc)
}

/// `∫ τ(s, v∧w) τ(s, v) τ(s, w)`, split along `v = w`. Each triangle is
/// computed with its own mapped rule; the integrand is symmetric, so the two
/// halves agree and either order gives the same total.
pub fn var_z1_triangles(model: &CopulaModel, nodes: usize) -> Result<(f64, f64)> {
    let rule = GaussRule::new(nodes);
    let nodes01: Vec<(f64, f64)> = mapped(&rule, 0.0, 1.0).collect();
    // lower: w < v, so v∧w = w and the integrand is τ(s, w)² τ(s, v)
    let lower = ordered_sum(nodes01.len(), |a| {
        let (s, ws) = nodes01[a];
        let mut outer = 0.0;
        for &(v, wv) in &nodes01 {
            let inner = integrate(&rule, 0.0, v, |w| Ok(model.tau(s, w)?.powi(2)))?;
            outer += wv * model.tau(s, v)? * inner;
        }
        Ok(ws * outer)
    })?;
    // upper: v < w, integrand τ(s, v)² τ(s, w)
    let upper = ordered_sum(nodes01.len(), |a| {
        let (s, ws) = nodes01[a];
        let mut outer = 0.0;
        for &(w, ww) in &nodes01 {
            let inner = integrate(&rule, 0.0, w, |v| Ok(model.tau(s, v)?.powi(2)))?;
            outer += ww * model.tau(s, w)? * inner;
        }
        Ok(ws * outer)
    })?;
    Ok((lower, upper))
}

/// Row and column integrals of `τ²` on a tensor grid.
struct Marginals {
    nodes: Vec<(f64, f64)>,
    /// `A(u) = ∫ τ²(u, v) dv` at the nodes.
    row: Vec<f64>,
    /// `B(v) = ∫ τ²(u, v) du` at the nodes.
    col: Vec<f64>,
    total: f64,
}

fn marginals(model: &CopulaModel, nodes: usize) -> Result<Marginals> {
    let rule = GaussRule::new(nodes);
    let nodes: Vec<(f64, f64)> = mapped(&rule, 0.0, 1.0).collect();
    let m = nodes.len();
    let grid: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            nodes
                .iter()
                .map(|&(v, _)| model.tau(nodes[i].0, v).map(|t| t * t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let row: Vec<f64> = grid
        .iter()
        .map(|r| r.iter().zip(&nodes).map(|(t, (_, w))| w * t).sum())
        .collect();
    let col: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| nodes[i].1 * grid[i][j]).sum())
        .collect();
    let total = row.iter().zip(&nodes).map(|(a, (_, w))| w * a).sum();
    Ok(Marginals {
        nodes,
        row,
        col,
        total,
    })
}

/// All six terms and `σ²`, with `nodes_3d` points per axis for the
/// three-dimensional integrals and `nodes_4d` for the two integrals that
/// come from four-dimensional ones.
pub fn variance_terms(
    model: &CopulaModel,
    nodes_3d: usize,
    nodes_4d: usize,
) -> Result<VarianceBreakdown> {
    if nodes_3d < 16 {
        return Err(Error::invalid(format!("nodes_3d must be at least 16, got {nodes_3d}")));
    }
    if nodes_4d < 8 {
        return Err(Error::invalid(format!("nodes_4d must be at least 8, got {nodes_4d}")));
    }
    let m3 = marginals(model, nodes_3d)?;
    let i2 = m3.total * m3.total;
    let (lower, upper) = var_z1_triangles(model, nodes_3d)?;
    let j1 = lower + upper;
    let j2: f64 = m3.row.iter().zip(&m3.nodes).map(|(a, (_, w))| w * a * a).sum();
    let j3: f64 = m3.col.iter().zip(&m3.nodes).map(|(b, (_, w))| w * b * b).sum();

    let m4 = marginals(model, nodes_4d)?;
    let i2_4 = m4.total * m4.total;
    let rule4 = GaussRule::new(nodes_4d);
    let n4 = m4.nodes.len();
    // ∫_x ∫_y ∂₂τ(x, y) B(y) ∫_y^1 τ(x, w) dw
    let j4 = ordered_sum(n4, |a| {
        let (x, wx) = m4.nodes[a];
        let mut acc = 0.0;
        for (b, &(y, wy)) in m4.nodes.iter().enumerate() {
            let tail = integrate(&rule4, y, 1.0, |w| model.tau(x, w))?;
            acc += wy * model.d2tau(x, y)? * m4.col[b] * tail;
        }
        Ok(wx * acc)
    })?;
    // ∫_u ∫_v ∂₂τ(u, v) A(u) B(v)
    let j5 = ordered_sum(n4, |a| {
        let (u, wu) = m4.nodes[a];
        let mut acc = 0.0;
        for (b, &(v, wv)) in m4.nodes.iter().enumerate() {
            acc += wv * model.d2tau(u, v)? * m4.col[b];
        }
        Ok(wu * m4.row[a] * acc)
    })?;

    let var_z1 = j1 - i2;
    let var_z2 = (j2 - i2) / 4.0;
    let var_z3 = (j3 - i2) / 4.0;
    let cov12_x2 = -j2 + i2;
    let cov13_x2 = -j4 + i2_4;
    let cov23_x2 = (j5 - i2_4) / 2.0;
    Ok(VarianceBreakdown {
        model: model.name(),
        rho: model.rho(),
        var_z1,
        var_z2,
        var_z3,
        cov12_x2,
        cov13_x2,
        cov23_x2,
        sigma_sq: var_z1 + var_z2 + var_z3 - cov12_x2 - cov13_x2 + cov23_x2,
        tau_sq_integral: m3.total,
        nodes_3d,
        nodes_4d,
    })
}
