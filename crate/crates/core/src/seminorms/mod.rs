//! Semi-norm computations: level pair sums `b_n`, renormalized energies
//! `a_n`, the discrete semi-norm `E_beta`, the weighted tail sums of the
//! monotone-convergence argument, and (in submodules) the integral
//! estimators, the Hölder ratio and the interval trace.
//!
//! Conventions: pair sums run over ordered pairs `p != q` of cell corners,
//! so a level-`n` cell contributes twice its three edge differences. The
//! exponent `alpha = log 3 / log 2` never enters through a floating
//! logarithm: `2^{alpha n}` is always `3^n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, GridFunction};
use crate::gasket::Gasket;
use crate::scalar::{pairwise_sum, Scalar};

pub mod annulus;
pub mod hoelder;
pub mod interval;
pub mod monte_carlo;

pub use annulus::{annulus_profiles, besov_annulus_sum, AnnulusParams, AnnulusProfile};
pub use hoelder::hoelder_ratio;
pub use interval::{interval_seminorm, trace_restrict, trace_termwise, DyadicFunction, TraceLevel};
pub use monte_carlo::{besov_monte_carlo, direct_pair_integral, monte_carlo_on, CellTable};

/// Cells per work unit in parallel pair sums. Fixed so the reduction tree
/// does not depend on the number of threads.
pub(crate) const CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum SemiNormError {
    #[error("level {n} exceeds the function level {level}")]
    LevelTooHigh { n: u32, level: u32 },
    #[error("lambda = {0} outside the open interval (1/5, 1/3)")]
    LambdaOutOfRange(f64),
    #[error("truncation {truncation} exceeds the sequence length {len}")]
    SequenceTooShort { truncation: usize, len: usize },
    #[error("quadrature level {m} must be at least truncation + 2 = {}", .truncation + 2)]
    InsufficientResolution { m: u32, truncation: u32 },
    #[error("interval exponent beta_2 = {0} must exceed 1")]
    IntervalExponent(f64),
    #[error("energy estimate {0} is not positive for a nonconstant function")]
    ZeroEnergy(f64),
    #[error("sample count must be positive")]
    NoSamples,
    #[error("beta = {0} must be positive and finite")]
    InvalidBeta(f64),
    #[error("radius exponent {radius_log2} too small for quadrature level {m} and truncation {truncation}")]
    RadiusTooSmall { radius_log2: i32, m: u32, truncation: u32 },
    #[error(transparent)]
    Function(#[from] FunctionError),
}

/// `b_n = sum_{w in W_n} sum_{p != q in V_w} (u(p) - u(q))^2`
pub fn level_pair_sum<T: Scalar>(gasket: &Gasket, u: &GridFunction<T>, n: u32) -> Result<T, SemiNormError> {
    if n > u.level() {
        return Err(SemiNormError::LevelTooHigh { n, level: u.level() });
    }
    let two = T::from_i64(2).unwrap();
    let partials: Vec<T> = gasket
        .cells(n)
        .par_chunks(CHUNK)
        .map(|chunk| {
            let terms: Vec<T> = chunk
                .iter()
                .map(|[a, b, c]| {
                    let (ua, ub, uc) = (u.value(*a), u.value(*b), u.value(*c));
                    (ua.clone() - ub.clone()).square()
                        + (ua.clone() - uc.clone()).square()
                        + (ub.clone() - uc.clone()).square()
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(two * pairwise_sum(&partials))
}

/// `a_n = (5/3)^n b_n` for `n = 1..=N`.
pub fn local_energy_sequence<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    truncation: u32,
) -> Result<Vec<T>, SemiNormError> {
    (1..=truncation)
        .map(|n| Ok(renormalization::<T>(n) * level_pair_sum(gasket, u, n)?))
        .collect()
}

/// `(5/3)^n`, by exact integer powers.
pub fn renormalization<T: Scalar>(n: u32) -> T {
    let five = T::from_i64(5).unwrap();
    let three = T::from_i64(3).unwrap();
    five.powi_exact(n) / three.powi_exact(n)
}

/// Extends `a_1..a_m` by `a_n = a_m` for `n > m`, which is exact for the
/// harmonic spline of a level-`m` grid function.
pub fn spline_energy_sequence<T: Scalar>(a: &[T], len: usize) -> Vec<T> {
    let mut out = a.to_vec();
    if let Some(last) = a.last() {
        out.resize(len.max(a.len()), last.clone());
    }
    out
}

/// `2^{(beta - alpha) n}` computed as `2^{beta n} / 3^n`.
pub fn discrete_weight(beta: f64, n: u32) -> f64 {
    (beta * n as f64).exp2() / 3f64.powi(n as i32)
}

/// `2^{(alpha + beta) n}` computed as `3^n 2^{beta n}`.
pub fn integral_weight(beta: f64, n: u32) -> f64 {
    3f64.powi(n as i32) * (beta * n as f64).exp2()
}

/// Whether a sequence is nondecreasing (exact comparison in `T`).
pub fn is_nondecreasing<T: PartialOrd>(a: &[T]) -> bool {
    a.windows(2).all(|w| w[0] <= w[1])
}

/// Output of [`weighted_tail_sum`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTailSum<T> {
    /// `(5 lambda - 1) sum_{n=1}^N (5 lambda)^{-n} a_n`
    pub partial: T,
    /// `(5 lambda)^{-N} a_N`: the remaining series if `a_n = a_N` beyond `N`.
    pub tail: T,
    /// The tail bound applies (and `partial + tail` is monotone in lambda)
    /// only when `a` is nondecreasing.
    pub a_nondecreasing: bool,
}

impl<T: Scalar> WeightedTailSum<T> {
    pub fn completed(&self) -> T {
        self.partial.clone() + self.tail.clone()
    }
}

/// `(5 lambda - 1) sum_{n=1}^N (5 lambda)^{-n} a_n` for `lambda in (1/5, 1/3)`.
pub fn weighted_tail_sum<T: Scalar>(
    a: &[T],
    lambda: &T,
    truncation: usize,
) -> Result<WeightedTailSum<T>, SemiNormError> {
    let lo = T::from_ratio(1, 5);
    let hi = T::from_ratio(1, 3);
    if !(*lambda > lo && *lambda < hi) {
        return Err(SemiNormError::LambdaOutOfRange(lambda.to_f64_lossy()));
    }
    if truncation > a.len() {
        return Err(SemiNormError::SequenceTooShort {
            truncation,
            len: a.len(),
        });
    }
    let ratio = T::from_i64(5).unwrap() * lambda.clone();
    let inv = T::one() / ratio.clone();
    let mut power = T::one();
    let mut terms = Vec::with_capacity(truncation);
    for a_n in &a[..truncation] {
        power = power * inv.clone();
        terms.push(power.clone() * a_n.clone());
    }
    let partial = (ratio - T::one()) * pairwise_sum(&terms);
    let tail = match a[..truncation].last() {
        Some(last) => power * last.clone(),
        None => T::zero(),
    };
    Ok(WeightedTailSum {
        partial,
        tail,
        a_nondecreasing: is_nondecreasing(&a[..truncation]),
    })
}

/// How a [`BesovEstimate`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Annulus,
    MonteCarlo,
    Quadrature,
}

/// Estimate of the Besov integral `∫∫ (u(x)-u(y))^2 / |x-y|^{alpha+beta}`
/// or its dyadic annulus form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovEstimate {
    pub beta: f64,
    pub value: f64,
    pub method: EstimateMethod,
    /// Quadrature level `m` (cells of side `2^-m`).
    pub level: u32,
    /// Tail bound for the annulus sum, standard error for Monte Carlo.
    pub error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discarded: Option<u64>,
    /// Weighted annulus terms, empty for the other methods.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_level: Vec<f64>,
}

/// Per-level contributions and totals of the discrete semi-norm for one
/// `(u, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiNormReport {
    pub beta: f64,
    pub levels: u32,
    pub b_n: Vec<f64>,
    pub a_n: Vec<f64>,
    #[serde(rename = "E_beta_partial")]
    pub e_beta_partial: f64,
    pub weighted_total: f64,
    /// `2^{(beta-alpha)N} b_N`
    pub last_level_contribution: f64,
    /// Level contributions are decaying at the truncation level.
    pub tail_flag: bool,
}

/// `E_beta` truncated at `N`, with its level breakdown.
pub fn discrete_seminorm<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    beta: f64,
    truncation: u32,
) -> Result<SemiNormReport, SemiNormError> {
    let b: Vec<T> = (1..=truncation)
        .map(|n| level_pair_sum(gasket, u, n))
        .collect::<Result<_, _>>()?;
    Ok(report_from_pair_sums(&b, beta))
}

/// Builds the report from precomputed `b_1..b_N`.
pub fn report_from_pair_sums<T: Scalar>(b: &[T], beta: f64) -> SemiNormReport {
    let b_f: Vec<f64> = b.iter().map(|x| x.to_f64_lossy()).collect();
    let a_f: Vec<f64> = b
        .iter()
        .enumerate()
        .map(|(k, x)| (renormalization::<T>(k as u32 + 1) * x.clone()).to_f64_lossy())
        .collect();
    let contributions: Vec<f64> = b_f
        .iter()
        .enumerate()
        .map(|(k, x)| discrete_weight(beta, k as u32 + 1) * x)
        .collect();
    let e_beta_partial = pairwise_sum(&contributions);
    let last = contributions.last().copied().unwrap_or(0.0);
    let tail_flag = match contributions.len() {
        0 | 1 => false,
        len => contributions[len - 1] < contributions[len - 2],
    };
    SemiNormReport {
        beta,
        levels: b.len() as u32,
        b_n: b_f,
        a_n: a_f,
        e_beta_partial,
        weighted_total: (5.0 * (-beta).exp2() - 1.0) * e_beta_partial,
        last_level_contribution: last,
        tail_flag,
    }
}
