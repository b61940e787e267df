//! Floating-point abstraction shared by the analytic modules.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Real scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in target float")
    }

    /// Widens to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln(1 + d) - d`, accurate for small `d`.
pub fn ln1p_minus<T: Real>(d: T) -> T {
    if d.abs() < T::lit(0.05) {
        // alternating series -d²/2 + d³/3 - ...
        let mut term = d;
        let mut acc = T::zero();
        for k in 2..40 {
            term = -term * d;
            let add = term / T::from_usize(k).unwrap();
            acc = acc + add;
            if add.abs() <= T::epsilon() * acc.abs() {
                break;
            }
        }
        acc
    } else {
        d.ln_1p() - d
    }
}

/// Numerically stable `ln(exp(a) + exp(b) + ...)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// `ln cosh(h)` without overflow.
pub fn ln_cosh<T: Real>(h: T) -> T {
    let a = h.abs();
    a + (-(a + a)).exp().ln_1p() - T::LN_2()
}

/// `1 - tanh(h)^2` without cancellation.
pub fn sech2<T: Real>(h: T) -> T {
    let e = (-(h.abs() + h.abs())).exp();
    let four = T::lit(4.0);
    four * e / ((T::one() + e) * (T::one() + e))
}
