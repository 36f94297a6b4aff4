//! Scalar abstraction shared by grid functions and the pair-sum machinery.
//!
//! Everything that only needs field arithmetic (harmonic extension, level
//! pair sums, renormalized energies, weighted tail sums) is generic over
//! [`Scalar`], so the same code runs in `f32`, `f64` and exact
//! [`BigRational`]. Estimators that need fractional powers convert to `f64`.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};

/// Field-like scalar: `f32`, `f64` or exact rationals.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Exact for rationals (every finite `f64` is a dyadic rational).
    fn from_f64_exact(x: f64) -> Self;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("integer conversion") / Self::from_i64(den).expect("integer conversion")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `self^n` by repeated multiplication.
    fn powi_exact(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn from_f64_exact(x: f64) -> Self {
        x
    }
}

impl Scalar for f32 {
    fn from_f64_exact(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for BigRational {
    fn from_f64_exact(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }
}

/// Fixed-shape pairwise summation. The reduction tree depends only on the
/// length of the input, never on how the terms were produced.
pub fn pairwise_sum<T: Scalar>(terms: &[T]) -> T {
    match terms.len() {
        0 => T::zero(),
        1 => terms[0].clone(),
        len if len <= 8 => terms.iter().cloned().fold(T::zero(), |acc, t| acc + t),
        len => {
            let mid = len / 2;
            pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
        }
    }
}

/// Exact `3^-n` as a rational.
pub fn pow3_recip(n: u32) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(3u8).pow(n))
}

/// Exact rational `1`.
pub fn rational_one() -> BigRational {
    BigRational::one()
}

/// Exact rational `0`.
pub fn rational_zero() -> BigRational {
    BigRational::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_conversion_is_exact() {
        let x = 0.1f64;
        let r = BigRational::from_f64_exact(x);
        assert_eq!(r.to_f64().unwrap(), x);
        assert_ne!(r, BigRational::new(1.into(), 10.into()));
    }

    #[test]
    fn pairwise_sum_matches_fold_on_integers() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        let r: Vec<BigRational> = (1..=10).map(|i| BigRational::from_ratio(1, i)).collect();
        let direct = r.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
        assert_eq!(pairwise_sum(&r), direct);
    }

    #[test]
    fn powi_exact_rational() {
        let five_thirds = BigRational::from_ratio(5, 3);
        assert_eq!(five_thirds.powi_exact(3), BigRational::from_ratio(125, 27));
    }
}
