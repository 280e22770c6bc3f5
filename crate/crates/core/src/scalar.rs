//! Scalar abstraction shared by the geometry and optimization code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Thresholds in this crate are tuned for `f64`; `f32` works for quick
/// experiments but line searches near degenerate simplices get unreliable.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Strict positivity threshold for signed areas and volumes.
pub const EPS_MEASURE: f64 = 1e-12;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`], the logistic sigmoid.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv<T: Real>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-5.0f64, -1.0, 0.0, 0.5, 3.0, 10.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-14);
            assert!((softplus_inv(softplus(x)) - x).abs() < 1e-10);
        }
        assert!(softplus(1000.0f64).is_finite());
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn sigmoid_is_softplus_slope() {
        let h = 1e-6;
        for &x in &[-3.0f64, 0.0, 2.0] {
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-9);
        }
    }
}
