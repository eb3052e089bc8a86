//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the solver is generic over.
///
/// Implemented for `f32` and `f64`. Random numbers are always generated in
/// `f64` and narrowed, so a fixed seed yields the same stream for both widths.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `log(1 + exp(x))` without overflow.
    #[inline]
    fn log1p_exp(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Logistic function `1 / (1 + exp(-x))`.
    #[inline]
    fn logistic(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable `log(sum(exp(v)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<F: Real>(values: &[F]) -> F {
    let max = values.iter().copied().fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let s: F = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_exp_is_stable_at_extremes() {
        assert_eq!(1000.0f64.log1p_exp(), 1000.0);
        assert!((-1000.0f64).log1p_exp() >= 0.0);
        assert!((0.0f64.log1p_exp() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_symmetry() {
        for &x in &[-30.0f64, -2.0, 0.0, 0.7, 40.0] {
            assert!((x.logistic() + (-x).logistic() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.1f64, -2.0, 3.5];
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
