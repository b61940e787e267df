//! The random-matrix integral F(ξ, η) and the two multiplier conditions shared by the decoder
//! and the replica solver.
//!
//! With p = Λ_ξΛ_η and G(p) = ⟨1/(p+λ)⟩ the stationarity conditions of F read
//! ξ = Λ_η G(p) and η = (1−β)/Λ_η + βΛ_ξ G(p). Splitting off the zero atom (mass m0) and
//! writing c0 = 1 − β(1 − m0), both conditions collapse to a single equation
//! φ(p) = ξη, φ = G·(c0 + βpG⁺), where G⁺ is the resolvent of the nonzero part. The
//! value of F therefore depends on ξ and η only through ξη, and the physical saddle is the
//! branch that starts at p = +∞ for ξη → 0.
//!
//! For the Marchenko–Pastur law the branch is followed through the spectral edge onto the
//! second sheet of the resolvent, which keeps F analytic for all ξη > 0.

use crate::error::{Error, Result};
use crate::quad::integrate_legendre;
use crate::roots::{find_root, find_root_log, maximize_golden};
use crate::scalar::{ln1p_minus, Real};
use crate::spectra::{mp_branch, Spectrum};
use serde::Serialize;

/// Multiplier search interval (log scale).
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;
/// Default tolerance on the stationarity residual.
pub const SADDLE_TOL: f64 = 1e-10;

/// Resolvent sheet on which a saddle was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sheet {
    Principal,
    /// Analytic continuation through the spectral edge; Λ_η may be negative here.
    Continued,
}

/// Extremizing multipliers (Λ_ξ, Λ_η).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddlePair<T = f64> {
    pub lambda_xi: T,
    pub lambda_eta: T,
    pub sheet: Sheet,
}

/// Value of F with its saddle; `saddle` is `None` on the ξ = 0 or η = 0 boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FResult<T = f64> {
    pub value: T,
    pub saddle: Option<SaddlePair<T>>,
    pub residual: T,
}

#[derive(Debug, Clone, Copy)]
struct PathPoint<T> {
    p: T,
    g_plus: T,
    g_full: T,
    phi: T,
    /// Signed Marchenko–Pastur parameter; `None` for discrete laws.
    t: Option<T>,
}

impl<T> PathPoint<T> {
    fn continued(&self) -> bool
    where
        T: Real,
    {
        matches!(self.t, Some(t) if t < T::zero())
    }
}

fn discrete_point<T: Real>(spec: &Spectrum<T>, p: T) -> PathPoint<T> {
    let (beta, m0, c0) = (spec.beta(), spec.zero_mass(), spec.rank_gap());
    let g_plus = spec.resolvent_plus(p);
    let g_full = if m0 > T::zero() { m0 / p + g_plus } else { g_plus };
    let mut phi = (beta * m0 + c0) * g_plus + beta * p * g_plus * g_plus;
    if m0 > T::zero() && c0 > T::zero() {
        phi = phi + m0 * c0 / p;
    }
    PathPoint { p, g_plus, g_full, phi, t: None }
}

fn mp_point<T: Real>(spec: &Spectrum<T>, t: T) -> PathPoint<T> {
    let (beta, m0, c0) = (spec.beta(), spec.zero_mass(), spec.rank_gap());
    let br = mp_branch(beta, t);
    let (p, gp, gf) = (br.p, br.g_plus, br.g_full);
    let phi = if t >= T::zero() {
        let mut v = (beta * m0 + c0) * gp + beta * p * gp * gp;
        if m0 > T::zero() && c0 > T::zero() {
            v = v + m0 * c0 / p;
        }
        v
    } else {
        gf * (T::one() - beta + beta * p * gf)
    };
    PathPoint { p, g_plus: gp, g_full: gf, phi, t: Some(t) }
}

fn no_saddle<T: Real>(w: T, reach: T) -> Error {
    Error::Convergence {
        what: format!("saddle of F: xi*eta = {w:e} beyond the largest value {reach:e} reachable on the real branch"),
        residual: (w - reach).as_f64(),
    }
}

/// Locates the physical branch point with φ = w.
fn solve_path<T: Real>(spec: &Spectrum<T>, w: T) -> Result<PathPoint<T>> {
    let two = T::lit(2.0);
    if spec.is_marchenko_pastur() {
        let f = |t: T| mp_point(spec, t).phi - w;
        let turn = mp_point(spec, T::zero());
        if w == turn.phi {
            return Ok(turn);
        }
        if w < turn.phi {
            let mut hi = T::one();
            while f(hi) > T::zero() {
                hi = hi * two;
                if hi > T::lit(1e150) {
                    return Err(no_saddle(w, turn.phi));
                }
            }
            let t = find_root(f, T::zero(), hi, "saddle of F (principal sheet)")?;
            return Ok(mp_point(spec, t));
        }
        let mut lo = -T::lit(0.25);
        loop {
            let v = f(lo);
            if v.is_finite() && v > T::zero() {
                break;
            }
            if !v.is_finite() || lo < -T::lit(1e150) {
                return Err(no_saddle(w, turn.phi));
            }
            lo = lo * two;
        }
        let t = find_root(f, lo, T::zero(), "saddle of F (continued sheet)")?;
        return Ok(mp_point(spec, t));
    }

    let (m0, c0) = (spec.zero_mass(), spec.rank_gap());
    let lmin = spec.min_positive();
    let p_min = if (m0 > T::zero() && c0 > T::zero()) || !lmin.is_finite() { T::zero() } else { -lmin };
    let f = |p: T| discrete_point(spec, p).phi - w;
    let mut p_hi = (T::one() / w).max(T::one()) * two;
    while f(p_hi) >= T::zero() {
        p_hi = p_hi * two;
        if !p_hi.is_finite() {
            return Err(no_saddle(w, T::zero()));
        }
    }
    let span = p_hi - p_min;
    let (mut prev, mut best_k, mut best_phi) = (p_hi, 0usize, f(p_hi) + w);
    let max_k = (T::epsilon().recip().log2().to_usize().unwrap_or(52)) + 8;
    for k in 1..=max_k {
        let p = p_min + span * two.powi(-(k as i32));
        if p == p_min {
            break;
        }
        let v = f(p);
        if v.is_finite() && v >= T::zero() {
            let p = find_root(f, p, prev, "saddle of F")?;
            return Ok(discrete_point(spec, p));
        }
        if v.is_finite() && v + w > best_phi {
            best_phi = v + w;
            best_k = k;
        }
        prev = p;
    }
    // φ rises and falls between scan points: locate its maximum.
    let at = |k: usize| p_min + span * two.powi(-(k as i32));
    let (pc, phic) = maximize_golden(|p| discrete_point(spec, p).phi, at(best_k + 1), at(best_k.saturating_sub(1)), T::epsilon());
    if phic >= w {
        let p = find_root(f, pc, at(best_k.saturating_sub(1)), "saddle of F")?;
        return Ok(discrete_point(spec, p));
    }
    Err(no_saddle(w, phic))
}

/// Continuous-part log average ⟨ln(p+λ)⟩ on the continued sheet with ln|p| of the zero atom
/// folded in, which is regular where Λ_ξ vanishes.
fn mp_log_continued<T: Real>(spec: &Spectrum<T>, t: T) -> T {
    let c = spec.continuous().expect("Marchenko–Pastur part");
    let beta = spec.beta();
    let m0 = spec.zero_mass();
    let mut base = spec.mp_log_from_reference(T::zero());
    if m0 > T::zero() {
        base = base + m0 * c.lo.ln();
    }
    let two = T::lit(2.0);
    base + integrate_legendre(96, T::zero(), t, |s| two * s * mp_branch(beta, s).g_full)
}

/// F(ξ, η) with its saddle.
pub fn eval_f<T: Real>(spec: &Spectrum<T>, xi: T, eta: T) -> Result<FResult<T>> {
    if !(xi >= T::zero()) || !(eta >= T::zero()) || !xi.is_finite() || !eta.is_finite() {
        return Err(Error::Domain(format!("F needs finite xi, eta >= 0, got ({xi}, {eta})")));
    }
    if xi == T::zero() || eta == T::zero() {
        return Ok(FResult { value: T::zero(), saddle: None, residual: T::zero() });
    }
    let (beta, m0, c0) = (spec.beta(), spec.zero_mass(), spec.rank_gap());
    let one = T::one();
    let half = T::lit(0.5);
    let pt = solve_path(spec, xi * eta)?;
    let p = pt.p;
    let continued = pt.continued();
    let (a, b) = if c0 > T::zero() {
        let b = xi / pt.g_full;
        (p / b, b)
    } else {
        let a = eta / (beta * pt.g_plus);
        let b = if continued { beta * (p * pt.g_full - m0) / eta } else { p / a };
        (a, b)
    };
    let bad = |what: &str| Error::Numerical(format!("F saddle at xi={xi}, eta={eta}: {what} (a={a}, b={b})"));

    let value = if !continued && p >= one && a > T::zero() && b > T::zero() {
        -beta * half * ln1p_minus(a * xi - one) - half * ln1p_minus(b * eta - one) - beta * half * spec.log1p_plus(p)
    } else {
        let log_avg = if continued {
            mp_log_continued(spec, pt.t.expect("continued sheet is Marchenko–Pastur"))
        } else {
            spec.log_plus(p)
        };
        let mut v = -beta * half * log_avg + beta * a * xi * half + b * eta * half
            - beta * half * xi.ln()
            - half * eta.ln()
            - (one + beta) * half;
        if m0 > T::zero() {
            if continued {
                v = v + beta * m0 * half * b.abs().ln();
            } else {
                if !(a > T::zero()) {
                    return Err(bad("Lambda_xi must be positive with a zero atom"));
                }
                v = v - beta * m0 * half * a.ln();
            }
        }
        if c0 > T::zero() {
            if !(b > T::zero()) {
                return Err(bad("Lambda_eta must be positive"));
            }
            v = v - c0 * half * b.ln();
        }
        v
    };

    let (r1, r2) = if continued {
        let pgp = p * pt.g_full - m0;
        let mut e2 = beta * pgp / b;
        if c0 > T::zero() {
            e2 = e2 + c0 / b;
        }
        (xi - b * pt.g_full, eta - e2)
    } else {
        let gp = spec.resolvent_plus(a * b);
        let mut e1 = b * gp;
        if m0 > T::zero() {
            e1 = e1 + m0 / a;
        }
        let mut e2 = beta * a * gp;
        if c0 > T::zero() {
            e2 = e2 + c0 / b;
        }
        (xi - e1, eta - e2)
    };
    let residual = r1.abs().max(r2.abs());
    if !value.is_finite() || !residual.is_finite() {
        return Err(bad("non-finite value"));
    }
    if residual > T::lit(SADDLE_TOL).max(T::epsilon().sqrt() * T::lit(1e-2)) * (one + xi.max(eta)) {
        return Err(Error::Convergence { what: format!("saddle of F at ({xi}, {eta})"), residual: residual.as_f64() });
    }
    let sheet = if continued { Sheet::Continued } else { Sheet::Principal };
    Ok(FResult { value, saddle: Some(SaddlePair { lambda_xi: a, lambda_eta: b, sheet }), residual })
}

/// The function whose stationary points in (Λ_ξ, Λ_η) define F(ξ, η), for positive
/// multipliers. Where F has more than one real saddle, [`eval_f`] reports the one connected to
/// small ξη, while a joint extremization may sit on another; this form serves both.
pub fn f_functional<T: Real>(spec: &Spectrum<T>, xi: T, eta: T, lambda_xi: T, lambda_eta: T) -> Result<T> {
    if !(xi > T::zero() && eta > T::zero() && lambda_xi > T::zero() && lambda_eta > T::zero()) {
        return Err(Error::Domain(format!(
            "F functional needs positive arguments, got ({xi}, {eta}, {lambda_xi}, {lambda_eta})"
        )));
    }
    let (beta, m0, c0) = (spec.beta(), spec.zero_mass(), spec.rank_gap());
    let half = T::lit(0.5);
    let mut v = -beta * half * spec.log_plus(lambda_xi * lambda_eta) + beta * lambda_xi * xi * half + lambda_eta * eta * half
        - beta * half * xi.ln()
        - half * eta.ln()
        - (T::one() + beta) * half;
    if m0 > T::zero() {
        v = v - beta * m0 * half * lambda_xi.ln();
    }
    if c0 > T::zero() {
        v = v - c0 * half * lambda_eta.ln();
    }
    Ok(v)
}

/// ⟨Λ_u/(Λ_xΛ_u+λ)⟩: the χ_x side of the multiplier conditions.
pub fn chi_x_condition<T: Real>(spec: &Spectrum<T>, lambda_x: T, lambda_u: T) -> T {
    let m0 = spec.zero_mass();
    let mut v = lambda_u * spec.resolvent_plus(lambda_x * lambda_u);
    if m0 > T::zero() {
        v = v + m0 / lambda_x;
    }
    v
}

/// (1−β)/Λ_u + β⟨Λ_x/(Λ_xΛ_u+λ)⟩: the χ_u side of the multiplier conditions.
pub fn chi_u_condition<T: Real>(spec: &Spectrum<T>, lambda_x: T, lambda_u: T) -> T {
    let c0 = spec.rank_gap();
    let mut v = spec.beta() * lambda_x * spec.resolvent_plus(lambda_x * lambda_u);
    if c0 > T::zero() {
        v = v + c0 / lambda_u;
    }
    v
}

fn range_err<T: Real>(what: &str, lo: T, hi: T, got: T) -> Error {
    Error::Range { what: what.to_string(), lo: lo.as_f64(), hi: hi.as_f64(), got: got.as_f64() }
}

fn log_bracket<T: Real>() -> (T, T) {
    (T::lit(LAMBDA_MIN), T::lit(LAMBDA_MAX))
}

fn search<T: Real>(f: impl FnMut(T) -> T, what: &str, lo: T, hi: T, got: T) -> Result<T> {
    let (a, b) = log_bracket::<T>();
    find_root_log(f, a, b, what).map_err(|e| match e {
        Error::Convergence { .. } => range_err(what, lo, hi, got),
        other => other,
    })
}

/// Given (χ_x, Λ_x), finds Λ_u from the χ_x condition (increasing in Λ_u), then χ_u.
pub fn solve_hstep_saddle<T: Real>(spec: &Spectrum<T>, chi_x: T, lambda_x: T) -> Result<(T, T)> {
    let (lo, hi) = (spec.zero_mass() / lambda_x, T::one() / lambda_x);
    if !(lambda_x > T::zero()) || !(chi_x > lo && chi_x < hi) {
        return Err(range_err("chi_x for the H-step saddle", lo, hi, chi_x));
    }
    let lu = search(|lu| chi_x_condition(spec, lambda_x, lu) - chi_x, "chi_x for the H-step saddle", lo, hi, chi_x)?;
    Ok((chi_u_condition(spec, lambda_x, lu), lu))
}

/// Given (χ_u, Λ_u), finds Λ_x from the χ_u condition (increasing in Λ_x), then χ_x.
pub fn solve_vstep_saddle<T: Real>(spec: &Spectrum<T>, chi_u: T, lambda_u: T) -> Result<(T, T)> {
    let (lo, hi) = (spec.rank_gap() / lambda_u, T::one() / lambda_u);
    if !(lambda_u > T::zero()) || !(chi_u > lo && chi_u < hi) {
        return Err(range_err("chi_u for the V-step saddle", lo, hi, chi_u));
    }
    let lx = search(|lx| chi_u_condition(spec, lx, lambda_u) - chi_u, "chi_u for the V-step saddle", lo, hi, chi_u)?;
    Ok((chi_x_condition(spec, lx, lambda_u), lx))
}

/// Given (χ_x, Λ_u), finds Λ_x from the χ_x condition (decreasing in Λ_x), then χ_u.
/// Returns `(chi_u, lambda_x)`.
pub fn solve_carried_saddle<T: Real>(spec: &Spectrum<T>, chi_x: T, lambda_u: T) -> Result<(T, T)> {
    let hi = if spec.zero_mass() > T::zero() {
        T::infinity()
    } else {
        lambda_u * spec.average(|l| T::one() / l).unwrap_or(T::infinity())
    };
    if !(lambda_u > T::zero()) || !(chi_x > T::zero() && chi_x < hi) {
        return Err(range_err("chi_x for Lambda_x at fixed Lambda_u", T::zero(), hi, chi_x));
    }
    let what = "chi_x for Lambda_x at fixed Lambda_u";
    let lx = search(|lx| chi_x_condition(spec, lx, lambda_u) - chi_x, what, T::zero(), hi, chi_x)?;
    Ok((chi_u_condition(spec, lx, lambda_u), lx))
}

/// Variance of the Gaussian-equivalent outputs: β⟨λ⟩T_x.
pub fn gaussian_equivalent_variance<T: Real>(spec: &Spectrum<T>, t_x: T) -> T {
    spec.beta() * spec.mean() * t_x
}
