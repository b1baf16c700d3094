//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the estimators, fits and metrics are generic over.
///
/// Implemented for `f32` and `f64`. Tolerances are expressed in `f64` and
/// floored at a small multiple of the type's epsilon, so iterative routines
/// stay meaningful in single precision.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable")
    }

    /// `max(x, k * epsilon)`: a requested tolerance that the type can resolve.
    #[inline]
    fn tol(x: f64) -> Self {
        Self::lit(x).max(Self::epsilon() * Self::lit(64.0))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(n!)`. Exact summation for small `n`, Stirling series above.
pub fn ln_factorial<T: Scalar>(n: T) -> T {
    if n <= T::one() {
        return T::zero();
    }
    if n < T::lit(16.0) {
        let mut acc = T::zero();
        let mut k = T::lit(2.0);
        while k <= n {
            acc = acc + k.ln();
            k = k + T::one();
        }
        return acc;
    }
    // ln Γ(x) with x = n + 1
    let x = n + T::one();
    let inv = T::one() / x;
    let inv2 = inv * inv;
    let series = inv
        * (T::lit(1.0 / 12.0)
            - inv2 * (T::lit(1.0 / 360.0) - inv2 * (T::lit(1.0 / 1260.0) - inv2 * T::lit(1.0 / 1680.0))));
    (x - T::lit(0.5)) * x.ln() - x + T::lit(0.5) * (T::lit(2.0) * T::PI()).ln() + series
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for n in 0..200u32 {
            let direct: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
            let got = ln_factorial(n as f64);
            assert!((got - direct).abs() < 1e-10 * direct.max(1.0), "n={n}: {got} vs {direct}");
        }
    }

    #[test]
    fn tolerance_floor_in_single_precision() {
        assert!(f32::tol(1e-12) > 0.0);
        assert!(f32::tol(1e-12) >= f32::EPSILON);
        assert_eq!(f64::tol(1e-6), 1e-6);
    }
}
