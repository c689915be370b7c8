//! `τ̂²ₙ`, `r̂ₙ = 6τ̂²ₙ − 2` and Chatterjee's `ξ̂ₙ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{Bandwidths, CoefficientTables};
use crate::data::{rank_sample, PairedSample, RankedSample, TiePolicy};
use crate::error::{Error, Result};
use crate::format::ser_real;
use crate::polykernels::{Kernel, KernelName};
use crate::quadrature::GaussRule;

/// Which computation produced `τ̂²ₙ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatePath {
    Pairsum,
    Quadrature,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub kernel: KernelName,
    #[serde(serialize_with = "ser_real")]
    pub h1: f64,
    #[serde(serialize_with = "ser_real")]
    pub h2: f64,
    #[serde(serialize_with = "ser_real")]
    pub tau2_hat: f64,
    #[serde(serialize_with = "ser_real")]
    pub r_hat: f64,
    #[serde(serialize_with = "ser_real")]
    pub xi_hat: f64,
    pub path: EstimatePath,
    pub warnings: Vec<String>,
}

fn check_tables(n: usize, tables: &CoefficientTables) -> Result<()> {
    if tables.n() != n {
        return Err(Error::Config(format!(
            "coefficient tables built for n = {} but the sample has n = {n}",
            tables.n()
        )));
    }
    Ok(())
}

/// `τ̂²ₙ = 1/(n²h₁) Σ_{k,l} a_{kl} B_{π_k π_l}` with `π[R_i] = S_i`,
/// visiting only the band where `a` is non-zero.
pub fn tau2_pairsum(ranked: &RankedSample, tables: &CoefficientTables) -> Result<f64> {
    let n = ranked.n();
    check_tables(n, tables)?;
    Ok(tau2_pairsum_perm(&ranked.permutation(), tables))
}

/// [`tau2_pairsum`] for a permutation given directly (1-based values).
pub(crate) fn tau2_pairsum_perm(pi: &[usize], tables: &CoefficientTables) -> f64 {
    let n = pi.len();
    let w = tables.a_band_limit();
    let mut diag = 0.0;
    let mut off = 0.0;
    for k in 1..=n {
        let pk = pi[k - 1];
        diag += tables.a(k, k) * tables.b(pk, pk);
        let mut row = 0.0;
        for l in k + 1..=(k + w).min(n) {
            row += tables.a(k, l) * tables.b(pk, pi[l - 1]);
        }
        off += row;
    }
    let nf = n as f64;
    (diag + 2.0 * off) / (nf * nf * tables.bandwidths().h1)
}

/// Sorted break-aligned nodes on `[0, 1]`: `panels` uniform panels, each cut
/// at every point of `knots` falling inside, with `rule` on each piece.
fn aligned_nodes(panels: usize, knots: &[f64], rule: &GaussRule) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = (0..=panels).map(|p| p as f64 / panels as f64).collect();
    cuts.extend(knots.iter().copied().filter(|&t| t > 0.0 && t < 1.0));
    cuts.sort_unstable_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|c| c[1] > c[0])
        .flat_map(|c| rule.mapped(c[0], c[1]).collect::<Vec<_>>())
        .collect()
}

/// Gram matrix `M_{ij} = Σ_q w_q f_i(x_q) f_j(x_q)` over the given nodes.
fn gram(nodes: &[(f64, f64)], n: usize, f: impl Fn(usize, f64) -> f64 + Sync) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for &(x, w) in nodes {
                let fi = f(i, x);
                if fi == 0.0 {
                    continue;
                }
                let wf = w * fi;
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += wf * f(j, x);
                }
            }
            row
        })
        .collect();
    rows.concat()
}

/// `∫₀¹∫₀¹ τ̂ₙ(u, v)² du dv` by tensor Gauss–Legendre quadrature, with
/// `τ̂ₙ(u, v) = 1/(nh₁) Σᵢ K((u − Rᵢ/n)/h₁) K̄((v − Sᵢ/n)/h₂)` evaluated
/// pointwise.
///
/// Each axis uses `grid` uniform panels further cut at every kernel knot, and
/// a 4-point rule per piece, so the rule integrates the piecewise polynomial
/// integrand exactly up to rounding. The tensor sum is accumulated in Gram
/// form, `Σ_{ij} (Σ_u w_u f_i f_j)(Σ_v w_v g_i g_j)`, which is the same sum
/// reordered. Intended as an independent check of [`tau2_pairsum`].
pub fn tau2_quadrature(
    ranked: &RankedSample,
    kernel: &Kernel,
    bandwidths: Bandwidths,
    grid: usize,
) -> Result<f64> {
    if grid < 64 {
        return Err(Error::Config(format!("quadrature grid must be at least 64, got {grid}")));
    }
    let n = ranked.n();
    let nf = n as f64;
    let Bandwidths { h1, h2, .. } = bandwidths;
    let rule = GaussRule::new(4);
    let centers = |ranks: &[usize]| ranks.iter().map(|&r| r as f64 / nf).collect::<Vec<_>>();
    let cu = centers(ranked.r());
    let cv = centers(ranked.s());
    let knots = |c: &[f64], h: f64, ks: &[f64]| {
        c.iter()
            .flat_map(|&ci| ks.iter().map(move |&k| ci + h * k))
            .collect::<Vec<_>>()
    };
    let ks = kernel.knots();
    let u_nodes = aligned_nodes(grid, &knots(&cu, h1, ks), &rule);
    let v_nodes = aligned_nodes(grid, &knots(&cv, h2, ks), &rule);
    let mu = gram(&u_nodes, n, |i, u| kernel.density().eval((u - cu[i]) / h1));
    let mv = gram(&v_nodes, n, |i, v| kernel.cdf().eval((v - cv[i]) / h2));
    let total: f64 = mu.iter().zip(&mv).map(|(a, b)| a * b).sum();
    Ok(total / (nf * nf * h1 * h1))
}

/// `r̂ = 6 τ̂² − 2`.
pub fn r_hat(tau2: f64) -> f64 {
    6.0 * tau2 - 2.0
}

/// Chatterjee's `ξ̂ₙ = 1 − 3 Σ |S_(i+1) − S_(i)| / (n² − 1)` with
/// observations ordered by `x`.
pub fn xi_hat(sample: &PairedSample, ties: TiePolicy) -> Result<f64> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    Ok(xi_hat_ranked(&rank_sample(sample, ties)?))
}

/// [`xi_hat`] from ranks.
pub fn xi_hat_ranked(ranked: &RankedSample) -> f64 {
    xi_hat_perm(&ranked.permutation())
}

pub(crate) fn xi_hat_perm(pi: &[usize]) -> f64 {
    let n = pi.len() as f64;
    let gaps: usize = pi.windows(2).map(|w| w[0].abs_diff(w[1])).sum();
    1.0 - 3.0 * gaps as f64 / (n * n - 1.0)
}

/// Point estimates for a sample on the pair-sum path.
pub fn estimate(
    sample: &PairedSample,
    kernel: KernelName,
    bandwidths: Bandwidths,
    ties: TiePolicy,
) -> Result<EstimateReport> {
    let n = sample.n();
    let ranked = rank_sample(sample, ties)?;
    let tables = CoefficientTables::cached(n, kernel, bandwidths)?;
    let tau2 = tau2_pairsum(&ranked, &tables)?;
    debug_assert!(tau2 >= -1e-12, "pair sum of an integral of a square is negative");
    Ok(EstimateReport {
        n,
        kernel,
        h1: bandwidths.h1,
        h2: bandwidths.h2,
        tau2_hat: tau2,
        r_hat: r_hat(tau2),
        xi_hat: xi_hat_ranked(&ranked),
        path: EstimatePath::Pairsum,
        warnings: bandwidths.regime_warnings(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{a_coeff, b_coeff};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ranked(n: usize, rng: &mut ChaCha8Rng) -> RankedSample {
        let mut pi: Vec<usize> = (1..=n).collect();
        pi.shuffle(rng);
        let mut r: Vec<usize> = (1..=n).collect();
        r.shuffle(rng);
        let s = r.iter().map(|&ri| pi[ri - 1]).collect();
        RankedSample::new(r, s).unwrap()
    }

    #[test]
    fn pairsum_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for name in KernelName::ALL {
            let k = Kernel::new(name);
            for n in [5, 12, 30] {
                let bw = Bandwidths::default_powers(n).unwrap();
                let t = CoefficientTables::build(n, &k, bw).unwrap();
                for _ in 0..3 {
                    let rs = random_ranked(n, &mut rng);
                    let p = tau2_pairsum(&rs, &t).unwrap();
                    let q = tau2_quadrature(&rs, &k, bw, 256).unwrap();
                    assert!(((p - q) / q).abs() < 1e-6, "{name} n={n}: {p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn single_observation_identity() {
        let k = Kernel::new(KernelName::Epanechnikov);
        let bw = Bandwidths::explicit(0.3, 0.2).unwrap();
        let rs = RankedSample::new(vec![1], vec![1]).unwrap();
        let q = tau2_quadrature(&rs, &k, bw, 64).unwrap();
        let exact = a_coeff(1, 1, 1, 0.3, &k).unwrap() * b_coeff(1, 1, 1, 0.2, &k).unwrap() / 0.3;
        assert!((q - exact).abs() < 1e-12);
    }

    #[test]
    fn quadrature_grid_convergence() {
        let k = Kernel::new(KernelName::Triangular);
        let n = 20;
        let bw = Bandwidths::default_powers(n).unwrap();
        let rs = random_ranked(n, &mut ChaCha8Rng::seed_from_u64(5));
        let a = tau2_quadrature(&rs, &k, bw, 512).unwrap();
        let b = tau2_quadrature(&rs, &k, bw, 1024).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(a >= 0.0);
        assert!(tau2_quadrature(&rs, &k, bw, 63).is_err());
    }

    // At n = 12 with default bandwidths (h₁ ≈ 0.47) the identity is not the
    // maximiser: one sampled permutation beats it. Both values were confirmed
    // by an independent midpoint-rule evaluation (20000 nodes per axis).
    #[test]
    fn identity_permutation_near_top_but_not_maximal() {
        let n = 12;
        let k = Kernel::new(KernelName::Epanechnikov);
        let t = CoefficientTables::build(n, &k, Bandwidths::default_powers(n).unwrap()).unwrap();
        let id: Vec<usize> = (1..=n).collect();
        let top = tau2_pairsum_perm(&id, &t);
        assert!((top - 0.25113731300).abs() < 1e-9);
        let counter = [10, 12, 6, 5, 2, 3, 1, 7, 4, 8, 11, 9];
        let v = tau2_pairsum_perm(&counter, &t);
        assert!((v - 0.25143508156).abs() < 1e-9);
        assert!(v > top);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pi = id.clone();
        let mut above = 0;
        for _ in 0..500 {
            pi.shuffle(&mut rng);
            if tau2_pairsum_perm(&pi, &t) > top {
                above += 1;
            }
        }
        assert_eq!(above, 1);
    }

    #[test]
    fn identity_permutation_dominates_with_narrow_bandwidths() {
        let n = 12;
        let k = Kernel::new(KernelName::Epanechnikov);
        let t = CoefficientTables::build(n, &k, Bandwidths::explicit(0.1, 0.02).unwrap()).unwrap();
        let id: Vec<usize> = (1..=n).collect();
        let top = tau2_pairsum_perm(&id, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pi = id.clone();
        for _ in 0..500 {
            pi.shuffle(&mut rng);
            assert!(tau2_pairsum_perm(&pi, &t) <= top);
        }
    }

    #[test]
    fn large_n_independent_near_one_third() {
        let n = 2000;
        let t = CoefficientTables::cached(
            n,
            KernelName::Epanechnikov,
            Bandwidths::default_powers(n).unwrap(),
        )
        .unwrap();
        let rs = random_ranked(n, &mut ChaCha8Rng::seed_from_u64(2000));
        let v = tau2_pairsum(&rs, &t).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn table_size_mismatch_is_config_error() {
        let k = Kernel::new(KernelName::Epanechnikov);
        let t = CoefficientTables::build(10, &k, Bandwidths::default_powers(10).unwrap()).unwrap();
        let rs = RankedSample::from_permutation(&[1, 2, 3, 4, 5]).unwrap();
        assert!(matches!(tau2_pairsum(&rs, &t), Err(Error::Config(_))));
    }

    #[test]
    fn r_hat_values() {
        assert!((r_hat(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(r_hat(0.5), 1.0);
        assert_eq!(r_hat(0.0), -2.0);
    }

    #[test]
    fn xi_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = PairedSample::new(x.clone(), x.clone()).unwrap();
        assert_eq!(xi_hat(&s, TiePolicy::Error).unwrap(), 1.0 - 27.0 / 99.0);
        assert_eq!(xi_hat(&s, TiePolicy::Error).unwrap(), 8.0 / 11.0);
        let neg = PairedSample::new(x.clone(), x.iter().map(|v| -v).collect()).unwrap();
        assert_eq!(xi_hat(&neg, TiePolicy::Error).unwrap(), 8.0 / 11.0);
        let one = PairedSample::new(vec![1.0], vec![2.0]).unwrap();
        assert!(matches!(xi_hat(&one, TiePolicy::Error), Err(Error::SampleTooSmall { .. })));
    }

    #[test]
    fn xi_independent_large_sample() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let v = xi_hat(&PairedSample::new(x, y).unwrap(), TiePolicy::Error).unwrap();
        assert!(v.abs() < 0.05, "{v}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn monotone_transforms_leave_estimates_unchanged(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6..40)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let sample = PairedSample::new(x, y).unwrap();
            let bw = Bandwidths::default_powers(sample.n()).unwrap();
            let base = estimate(&sample, KernelName::Epanechnikov, bw, TiePolicy::Jitter { seed: 1 });
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let moved = sample.map(|v| v.exp(), |v| 3.0 * v + v.powi(3)).unwrap();
            let other = estimate(&moved, KernelName::Epanechnikov, bw, TiePolicy::Jitter { seed: 1 }).unwrap();
            prop_assert_eq!(base.tau2_hat.to_bits(), other.tau2_hat.to_bits());
            prop_assert_eq!(base.r_hat.to_bits(), other.r_hat.to_bits());
            prop_assert_eq!(base.xi_hat.to_bits(), other.xi_hat.to_bits());
        }
    }
}
