//! Gaussian tail functions.

use crate::scalar::Real;

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
pub fn q_function<T: Real>(x: T) -> T {
    T::lit(0.5 * libm::erfc(x.as_f64() / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf<T: Real>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() / (T::TAU()).sqrt()
}

/// ln Q(x), accurate far into the upper tail.
pub fn ln_q<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    if xf == f64::INFINITY {
        return T::neg_infinity();
    }
    if xf < 30.0 {
        return T::lit((0.5 * libm::erfc(xf / std::f64::consts::SQRT_2)).ln());
    }
    let z = 1.0 / (xf * xf);
    let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z * (1.0 - 9.0 * z))));
    T::lit(-0.5 * xf * xf - (xf * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln())
}
