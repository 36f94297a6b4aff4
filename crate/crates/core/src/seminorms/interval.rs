//! The unit interval side: dyadic grid functions on `[0,1]`, their discrete
//! Besov semi-norm, and the restriction of gasket functions to the bottom
//! edge `[p0, p1]`.

use serde::{Deserialize, Serialize};

use super::{discrete_weight, level_pair_sum, SemiNormError};
use crate::functions::GridFunction;
use crate::gasket::{DyadicPoint, Gasket};
use crate::scalar::{pairwise_sum, Scalar};

/// Values at `i / 2^level` for `i = 0..=2^level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicFunction<T> {
    pub level: u32,
    pub values: Vec<T>,
}

impl<T: Scalar> DyadicFunction<T> {
    pub fn from_fn(level: u32, f: impl Fn(u64) -> T) -> Self {
        DyadicFunction {
            level,
            values: (0..=1u64 << level).map(f).collect(),
        }
    }

    /// `v(i / 2^n)` for `n <= level`.
    pub fn at(&self, n: u32, i: u64) -> &T {
        &self.values[(i << (self.level - n)) as usize]
    }

    /// `sum_{i < 2^n} (v(i/2^n) - v((i+1)/2^n))^2`
    pub fn pair_sum(&self, n: u32) -> T {
        let terms: Vec<T> = (0..1u64 << n)
            .map(|i| (self.at(n, i).clone() - self.at(n, i + 1).clone()).square())
            .collect();
        pairwise_sum(&terms)
    }
}

/// `sum_{n=1}^N 2^{(beta2-1)n} sum_i (v(i/2^n) - v((i+1)/2^n))^2`
pub fn interval_seminorm<T: Scalar>(v: &DyadicFunction<T>, beta2: f64, truncation: u32) -> Result<f64, SemiNormError> {
    if !(beta2 > 1.0 && beta2.is_finite()) {
        return Err(SemiNormError::IntervalExponent(beta2));
    }
    if truncation > v.level {
        return Err(SemiNormError::LevelTooHigh {
            n: truncation,
            level: v.level,
        });
    }
    let terms: Vec<f64> = (1..=truncation)
        .map(|n| ((beta2 - 1.0) * n as f64).exp2() * v.pair_sum(n).to_f64_lossy())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `v(i/2^m) = u(i/2^m, 0)`; the bottom edge of `V_m` is exactly these points.
pub fn trace_restrict<T: Scalar>(gasket: &Gasket, u: &GridFunction<T>) -> DyadicFunction<T> {
    let m = u.level();
    DyadicFunction::from_fn(m, |i| {
        u.at(gasket, &DyadicPoint::new(m, i as i64, 0))
            .expect("bottom edge lies in V_m")
            .clone()
    })
}

/// One level of the termwise trace comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLevel<T> {
    pub n: u32,
    /// Interval pair sum of the trace.
    pub interval: T,
    /// Gasket pair sum `b_n`.
    pub gasket: T,
    /// `interval <= gasket`, compared in `T`.
    pub holds: bool,
}

impl<T: Scalar> TraceLevel<T> {
    /// Both sides weighted by `2^{(beta1-alpha)n} = 2^{(beta2-1)n}`.
    pub fn weighted(&self, beta1: f64) -> (f64, f64) {
        let w = discrete_weight(beta1, self.n);
        (w * self.interval.to_f64_lossy(), w * self.gasket.to_f64_lossy())
    }
}

/// Since `beta2 - 1 = beta1 - alpha`, both sides of the level-`n` trace
/// inequality carry the same weight, so the comparison is between the
/// unweighted pair sums and is exact whenever `T` is.
pub fn trace_termwise<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    truncation: u32,
) -> Result<Vec<TraceLevel<T>>, SemiNormError> {
    let v = trace_restrict(gasket, u);
    (1..=truncation)
        .map(|n| {
            let interval = if n <= v.level {
                v.pair_sum(n)
            } else {
                return Err(SemiNormError::LevelTooHigh { n, level: v.level });
            };
            let gasket = level_pair_sum(gasket, u, n)?;
            Ok(TraceLevel {
                n,
                holds: interval <= gasket,
                interval,
                gasket,
            })
        })
        .collect()
}
