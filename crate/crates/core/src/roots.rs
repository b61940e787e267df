//! Bracketed scalar root finding and bounded maximization.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Root of `f` in the bracket `[a, b]` (requires a sign change).
///
/// Regula falsi with the Illinois modification; falls back to bisection whenever the bracket
/// fails to halve over two steps. Returns the iterate with the smallest `|f|`.
pub fn find_root<T: Real>(mut f: impl FnMut(T) -> T, a: T, b: T, what: &str) -> Result<T> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::Convergence {
            what: format!("{what}: root not bracketed on [{a:e}, {b:e}]"),
            residual: fa.abs().min(fb.abs()).as_f64(),
        });
    }
    let (mut best_x, mut best_f) = if fa.abs() < fb.abs() { (a, fa.abs()) } else { (b, fb.abs()) };
    // 0: none, 1: a kept twice, 2: b kept twice
    let mut last = 0u8;
    let mut widths = [(b - a).abs(); 2];
    let two = T::lit(2.0);
    for it in 0..500 {
        let width = (b - a).abs();
        let tol = T::lit(4.0) * T::epsilon() * (a.abs() + b.abs()) * T::lit(0.5) + T::min_positive_value();
        if width <= tol {
            return Ok(best_x);
        }
        let bisect = it >= 2 && width > widths[0] * T::lit(0.5);
        let mut c = (a * fb - b * fa) / (fb - fa);
        if bisect || !(c > a.min(b) && c < a.max(b)) {
            c = (a + b) / two;
        }
        let fc = f(c);
        if !fc.is_finite() {
            return Err(Error::Numerical(format!("{what}: non-finite function value at {c:e}")));
        }
        if fc.abs() < best_f {
            best_x = c;
            best_f = fc.abs();
        }
        if fc == T::zero() {
            return Ok(c);
        }
        if fc.signum() == fa.signum() {
            a = c;
            fa = fc;
            if last == 2 {
                fb = fb / two;
            }
            last = 2;
        } else {
            b = c;
            fb = fc;
            if last == 1 {
                fa = fa / two;
            }
            last = 1;
        }
        widths = [widths[1], width];
    }
    Err(Error::Convergence { what: what.to_string(), residual: best_f.as_f64() })
}

/// Root of a function of `ln x` on `[lo, hi]` (both positive); the search runs in log scale.
pub fn find_root_log<T: Real>(mut f: impl FnMut(T) -> T, lo: T, hi: T, what: &str) -> Result<T> {
    find_root(|u: T| f(u.exp()), lo.ln(), hi.ln(), what).map(|u| u.exp())
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn maximize_golden<T: Real>(mut f: impl FnMut(T) -> T, a: T, b: T, rel_tol: T) -> (T, T) {
    let g = T::lit(0.618_033_988_749_894_9);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if (b - a).abs() <= rel_tol * (a.abs() + b.abs()) + T::min_positive_value() {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
