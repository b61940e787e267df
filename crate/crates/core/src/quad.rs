//! Gaussian quadrature rules (computed in `f64`, cached) and adaptive normal expectations.

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn cached(kind: u8, n: usize, build: fn(usize) -> Rule) -> &'static Rule {
    static CACHE: OnceLock<Mutex<HashMap<(u8, usize), &'static Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry((kind, n)).or_insert_with(|| Box::leak(Box::new(build(n))))
}

/// Gauss–Hermite rule for the standard normal measure: `E f(z) ≈ Σ w_i f(z_i)`.
pub fn gauss_hermite_normal(n: usize) -> &'static Rule {
    cached(0, n, build_hermite)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> &'static Rule {
    cached(1, n, build_legendre)
}

fn build_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    // Golub–Welsch eigenvalues as starting points, polished by Newton on the orthonormal
    // Hermite recurrence (weight e^{-x²}).
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().map(|z| z / std::f64::consts::SQRT_2).collect();
    guesses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &x0 in &guesses {
        let mut z = x0;
        let mut pp = 1.0;
        for _ in 0..50 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes.push(z * std::f64::consts::SQRT_2);
        weights.push(2.0 / (pp * pp) / std::f64::consts::PI.sqrt());
    }
    Rule { nodes, weights }
}

fn build_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Rule { nodes, weights }
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss–Legendre rule.
pub fn integrate_legendre<T: Real>(n: usize, a: T, b: T, mut f: impl FnMut(T) -> T) -> T {
    let rule = gauss_legendre(n);
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let mut acc = T::zero();
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc = acc + T::lit(w) * f(mid + half * T::lit(x));
    }
    acc * half
}

/// Node counts visited by the adaptive normal expectation.
pub const HERMITE_LADDER: [usize; 4] = [61, 121, 241, 481];

/// `E[f(z)]` for `z ~ N(0,1)` where `f` returns several components at once.
///
/// Starts at `start` nodes and moves up [`HERMITE_LADDER`] until every component changes by
/// less than `rel_tol` (relative, with an absolute floor of `rel_tol * abs_floor`).
pub fn normal_expect_vec<T: Real, const M: usize>(
    start: usize,
    rel_tol: f64,
    abs_floor: f64,
    mut f: impl FnMut(T) -> [T; M],
) -> Result<[T; M]> {
    let eval = |n: usize, f: &mut dyn FnMut(T) -> [T; M]| {
        let rule = gauss_hermite_normal(n);
        let mut acc = [T::zero(); M];
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = f(T::lit(z));
            for k in 0..M {
                acc[k] = acc[k] + T::lit(w) * v[k];
            }
        }
        acc
    };
    let ladder: Vec<usize> = HERMITE_LADDER.iter().copied().filter(|&n| n >= start).collect();
    let mut prev = eval(ladder[0], &mut f);
    let mut worst = f64::INFINITY;
    for &n in &ladder[1..] {
        let cur = eval(n, &mut f);
        worst = 0.0;
        for k in 0..M {
            let scale = cur[k].as_f64().abs().max(abs_floor);
            worst = worst.max((cur[k] - prev[k]).as_f64().abs() / scale);
        }
        if worst.is_finite() && worst < rel_tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Accuracy(format!(
        "Gauss–Hermite relative change {worst:e} above {rel_tol:e} at {} nodes",
        ladder[ladder.len() - 1]
    )))
}

/// Scalar form of [`normal_expect_vec`].
pub fn normal_expect<T: Real>(rel_tol: f64, abs_floor: f64, mut f: impl FnMut(T) -> T) -> Result<T> {
    normal_expect_vec(61, rel_tol, abs_floor, |z| [f(z)]).map(|v| v[0])
}
