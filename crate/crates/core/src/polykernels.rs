//! Exact piecewise-polynomial arithmetic and the kernel catalog.
//!
//! Every integral that enters the estimator is an integral of a product of
//! (affinely transformed) kernels or kernel CDFs. Both are piecewise
//! polynomials, so those integrals are evaluated in closed form here instead
//! of by numerical quadrature.
//!
//! Pieces are stored in *local* coordinates: piece `k` holds the coefficients
//! of `p(x) = Σ c_d (x - b_k)^d` on `[b_k, b_{k+1}]`. Shifting a kernel far
//! from the origin therefore never produces large global coefficients, and
//! evaluation stays well conditioned for any shift.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Highest polynomial degree a product may reach.
pub const MAX_DEGREE: usize = 8;

type Coeffs = [f64; MAX_DEGREE + 1];

/// A piecewise polynomial with constant extensions outside its breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<f64>>,
    left_value: f64,
    right_value: f64,
}

/// Polynomial `Σ c_d t^d` in a local variable, stack allocated.
#[derive(Clone, Copy)]
struct Local {
    c: Coeffs,
    deg: usize,
}

impl Local {
    fn constant(v: f64) -> Self {
        let mut c = [0.0; MAX_DEGREE + 1];
        c[0] = v;
        Local { c, deg: 0 }
    }

    fn from_slice(coeffs: &[f64]) -> Self {
        let mut c = [0.0; MAX_DEGREE + 1];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Local {
            c,
            deg: coeffs.len().saturating_sub(1),
        }
    }

    /// Re-expand around `t = delta`, i.e. return `q(t) = p(t + delta)`.
    fn shifted(mut self, delta: f64) -> Self {
        if delta != 0.0 {
            taylor_shift(&mut self.c[..=self.deg], delta);
        }
        self
    }

    fn mul(&self, other: &Local) -> Result<Local> {
        let deg = self.deg + other.deg;
        if deg > MAX_DEGREE {
            return Err(Error::Internal(format!(
                "product degree {deg} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        let mut c = [0.0; MAX_DEGREE + 1];
        for i in 0..=self.deg {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..=other.deg {
                c[i + j] += self.c[i] * other.c[j];
            }
        }
        Ok(Local { c, deg })
    }

    /// `∫_0^w p(t) dt`.
    fn integral(&self, w: f64) -> f64 {
        let mut acc = 0.0;
        for d in (0..=self.deg).rev() {
            acc = acc * w + self.c[d] / (d + 1) as f64;
        }
        acc * w
    }
}

/// In-place Taylor shift: coefficients of `p(t + delta)`.
fn taylor_shift(c: &mut [f64], delta: f64) {
    let deg = c.len().saturating_sub(1);
    for i in 0..deg {
        for j in (i..deg).rev() {
            c[j] += delta * c[j + 1];
        }
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

impl PiecewisePolynomial {
    /// Build from breakpoints and local-coordinate pieces.
    pub fn new(
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<f64>>,
        left_value: f64,
        right_value: f64,
    ) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::invalid("at least two breakpoints are required"));
        }
        if pieces.len() != breakpoints.len() - 1 {
            return Err(Error::invalid(format!(
                "{} pieces for {} breakpoints",
                pieces.len(),
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite())
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("breakpoints must be finite and strictly increasing"));
        }
        if pieces.iter().any(|p| p.is_empty() || p.len() > MAX_DEGREE + 1) {
            return Err(Error::invalid(format!(
                "each piece needs between 1 and {} coefficients",
                MAX_DEGREE + 1
            )));
        }
        if !left_value.is_finite() || !right_value.is_finite() {
            return Err(Error::invalid("extension values must be finite"));
        }
        Ok(PiecewisePolynomial {
            breakpoints,
            pieces,
            left_value,
            right_value,
        })
    }

    /// Build from pieces given in the global variable `x` (ascending degree).
    pub fn from_global(
        breakpoints: Vec<f64>,
        global_pieces: Vec<Vec<f64>>,
        left_value: f64,
        right_value: f64,
    ) -> Result<Self> {
        let pieces = global_pieces
            .into_iter()
            .zip(&breakpoints)
            .map(|(mut c, &b)| {
                taylor_shift(&mut c, b);
                c
            })
            .collect();
        Self::new(breakpoints, pieces, left_value, right_value)
    }

    /// The constant function `value` on the whole line.
    pub fn constant(value: f64) -> Self {
        PiecewisePolynomial {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![vec![value]],
            left_value: value,
            right_value: value,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Local-coordinate coefficients of each piece.
    pub fn pieces(&self) -> &[Vec<f64>] {
        &self.pieces
    }

    pub fn left_value(&self) -> f64 {
        self.left_value
    }

    pub fn right_value(&self) -> f64 {
        self.right_value
    }

    pub fn degree(&self) -> usize {
        self.pieces.iter().map(|p| p.len() - 1).max().unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let first = self.breakpoints[0];
        let last = *self.breakpoints.last().expect("non-empty breakpoints");
        if x < first {
            return self.left_value;
        }
        if x > last {
            return self.right_value;
        }
        let k = self.piece_index(x);
        horner(&self.pieces[k], x - self.breakpoints[k])
    }

    fn piece_index(&self, x: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        k.saturating_sub(1).min(self.pieces.len() - 1)
    }

    /// The polynomial valid on the subinterval containing `mid`, expanded
    /// around `start`.
    fn local_at(&self, start: f64, mid: f64) -> Local {
        if mid < self.breakpoints[0] {
            return Local::constant(self.left_value);
        }
        if mid > *self.breakpoints.last().expect("non-empty breakpoints") {
            return Local::constant(self.right_value);
        }
        let k = self.piece_index(mid);
        Local::from_slice(&self.pieces[k]).shifted(start - self.breakpoints[k])
    }

    /// `u ↦ p((u - shift) / scale)`.
    pub fn affine_compose(&self, shift: f64, scale: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::invalid(format!(
                "affine composition needs a finite non-zero scale and finite shift (scale = {scale}, shift = {shift})"
            )));
        }
        let inv = 1.0 / scale;
        let rescale = |c: &mut [f64]| {
            let mut f = 1.0;
            for ci in c.iter_mut() {
                *ci *= f;
                f *= inv;
            }
        };
        if scale > 0.0 {
            let breakpoints = self.breakpoints.iter().map(|b| scale * b + shift).collect();
            let pieces = self
                .pieces
                .iter()
                .map(|p| {
                    let mut c = p.clone();
                    rescale(&mut c);
                    c
                })
                .collect();
            Ok(PiecewisePolynomial {
                breakpoints,
                pieces,
                left_value: self.left_value,
                right_value: self.right_value,
            })
        } else {
            let breakpoints = self
                .breakpoints
                .iter()
                .rev()
                .map(|b| scale * b + shift)
                .collect();
            let pieces = self
                .pieces
                .iter()
                .zip(self.breakpoints.windows(2))
                .rev()
                .map(|(p, w)| {
                    let mut c = p.clone();
                    taylor_shift(&mut c, w[1] - w[0]);
                    rescale(&mut c);
                    c
                })
                .collect();
            Ok(PiecewisePolynomial {
                breakpoints,
                pieces,
                left_value: self.right_value,
                right_value: self.left_value,
            })
        }
    }

    /// Antiderivative starting at the first breakpoint. Requires zero
    /// extensions so that the result again has constant extensions.
    pub fn antiderivative(&self) -> Result<Self> {
        if self.left_value != 0.0 || self.right_value != 0.0 {
            return Err(Error::invalid(
                "antiderivative requires zero constant extensions",
            ));
        }
        let mut acc = 0.0;
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (p, w) in self.pieces.iter().zip(self.breakpoints.windows(2)) {
            if p.len() > MAX_DEGREE {
                return Err(Error::Internal("antiderivative degree overflow".into()));
            }
            let mut c = Vec::with_capacity(p.len() + 1);
            c.push(acc);
            c.extend(p.iter().enumerate().map(|(d, &cd)| cd / (d + 1) as f64));
            acc = horner(&c, w[1] - w[0]);
            pieces.push(c);
        }
        Ok(PiecewisePolynomial {
            breakpoints: self.breakpoints.clone(),
            pieces,
            left_value: 0.0,
            right_value: acc,
        })
    }

    /// `∫_lo^hi p(u) du`.
    pub fn integrate(&self, lo: f64, hi: f64) -> Result<f64> {
        integrate_product(self, &PiecewisePolynomial::constant(1.0), lo, hi)
    }
}

/// Exact `∫_lo^hi p(u) q(u) du`.
///
/// `[lo, hi]` is split at the union of both breakpoint sets; on each piece the
/// two polynomials are multiplied and integrated in closed form.
pub fn integrate_product(
    p: &PiecewisePolynomial,
    q: &PiecewisePolynomial,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("integration limits must be finite"));
    }
    if lo > hi {
        return Err(Error::invalid(format!(
            "integration limits out of order: lo = {lo} > hi = {hi}"
        )));
    }
    if lo == hi {
        return Ok(0.0);
    }
    let mut cuts = Vec::with_capacity(p.breakpoints.len() + q.breakpoints.len() + 2);
    cuts.push(lo);
    cuts.extend(
        p.breakpoints
            .iter()
            .chain(&q.breakpoints)
            .copied()
            .filter(|&b| b > lo && b < hi),
    );
    cuts.push(hi);
    cuts.sort_unstable_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (s, e) = (w[0], w[1]);
        let mid = 0.5 * (s + e);
        let prod = p.local_at(s, mid).mul(&q.local_at(s, mid))?;
        total += prod.integral(e - s);
    }
    Ok(total)
}

/// Kernels available in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Epanechnikov,
    Triangular,
}

impl KernelName {
    pub const ALL: [KernelName; 2] = [KernelName::Epanechnikov, KernelName::Triangular];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelName::Epanechnikov => "epanechnikov",
            KernelName::Triangular => "triangular",
        }
    }
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" | "e" => Ok(KernelName::Epanechnikov),
            "triangular" | "tri" | "t" => Ok(KernelName::Triangular),
            _ => Err(Error::UnknownKernel(s.to_string())),
        }
    }
}

/// A symmetric kernel on `[-1, 1]` together with its CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    name: KernelName,
    density: PiecewisePolynomial,
    cdf: PiecewisePolynomial,
}

impl Kernel {
    pub fn new(name: KernelName) -> Self {
        let density = match name {
            KernelName::Epanechnikov => {
                PiecewisePolynomial::from_global(vec![-1.0, 1.0], vec![vec![0.75, 0.0, -0.75]], 0.0, 0.0)
            }
            KernelName::Triangular => PiecewisePolynomial::from_global(
                vec![-1.0, 0.0, 1.0],
                vec![vec![1.0, 1.0], vec![1.0, -1.0]],
                0.0,
                0.0,
            ),
        }
        .expect("catalog densities are well formed");
        let cdf = density
            .antiderivative()
            .expect("catalog densities have zero extensions");
        Kernel { name, density, cdf }
    }

    pub fn name(&self) -> KernelName {
        self.name
    }

    /// `K`.
    pub fn density(&self) -> &PiecewisePolynomial {
        &self.density
    }

    /// `K̄(x) = ∫_{-∞}^x K`.
    pub fn cdf(&self) -> &PiecewisePolynomial {
        &self.cdf
    }

    /// Interior knots of `K` (including the support ends).
    pub fn knots(&self) -> &[f64] {
        self.density.breakpoints()
    }
}

/// Look a kernel up by name.
pub fn kernel_catalog(name: &str) -> Result<Kernel> {
    Ok(Kernel::new(name.parse()?))
}
