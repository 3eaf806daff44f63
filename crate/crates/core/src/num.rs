//! Scalar abstraction shared by every estimator in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the models are generic over (`f32` or `f64`).
///
/// Special functions are evaluated in double precision and narrowed back, so
/// `f32` instantiations trade accuracy for memory, never correctness of the
/// sampler logic.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when checking that a vector lies on the simplex.
    const SIMPLEX_TOL: f64;

    /// Converts an `f64` literal. Never fails for finite input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 is representable")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    fn lgamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.f64()))
    }
}

impl Real for f64 {
    const SIMPLEX_TOL: f64 = 1e-10;
}

impl Real for f32 {
    const SIMPLEX_TOL: f64 = 1e-5;
}

/// `log(sum(exp(xs)))` without overflow. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
#[inline]
pub fn xlogy<T: Real>(x: T, y: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x * y.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.1f64, -2.0, 3.5];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
        assert!(log_sum_exp(&[1000.0f64, 1000.0]).is_finite());
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn ln_gamma_both_precisions() {
        assert!((4.0f64.lgamma() - 6.0f64.ln()).abs() < 1e-12);
        assert!((4.0f32.lgamma() - 6.0f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn xlogy_zero_convention() {
        assert_eq!(xlogy(0.0f64, 0.0), 0.0);
        assert!((xlogy(2.0f64, std::f64::consts::E) - 2.0).abs() < 1e-15);
    }
}
