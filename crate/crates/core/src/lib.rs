//! Kernel estimation of the copula-derivative dependence coefficient
//! `r = 6 ∫∫ (∂₁C)² − 2` (which equals Chatterjee's ξ for continuous data),
//! with the exact finite-sample null centering, the limiting null variance,
//! asymptotic independence tests, and Monte Carlo / permutation checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod coefficients;
pub mod copula_variance;
pub mod data;
pub mod error;
pub mod estimators;
pub mod format;
pub mod inference;
pub mod montecarlo;
pub mod normal;
pub mod perm_oracle;
pub mod polykernels;
pub mod quadrature;

pub use error::{Error, Result};
pub use polykernels::{kernel_catalog, Kernel, KernelName, PiecewisePolynomial};
