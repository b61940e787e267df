//! Asymptotic eigenvalue laws ρ(λ) of HᵀH together with the load β = K/N.
//!
//! A [`Spectrum`] is a finite set of atoms plus an optional continuous part. The continuous part
//! is either the Marchenko–Pastur law (with analytic resolvent) or a tabulated quadrature rule.

use crate::error::{domain, Error, Result};
use crate::quad::integrate_legendre;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Atoms closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;
/// Default Chebyshev node count for the Marchenko–Pastur density.
pub const MP_DEFAULT_NODES: usize = 200;
const MP_MAX_NODES: usize = 1 << 17;
const MASS_TOL: f64 = 1e-10;

/// Kind of the continuous component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousKind {
    MarchenkoPastur,
    Tabulated,
}

/// Continuous component stored as a quadrature rule: `∫ρ f ≈ Σ weights[i]·f(nodes[i])`.
#[derive(Debug, Clone)]
pub struct Continuous<T = f64> {
    pub kind: ContinuousKind,
    pub lo: T,
    pub hi: T,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

/// Eigenvalue law of HᵀH with its load.
#[derive(Debug, Clone)]
pub struct Spectrum<T = f64> {
    beta: T,
    /// (mass, location), sorted by location, merged.
    atoms: Vec<(T, T)>,
    continuous: Option<Continuous<T>>,
    zero_mass: T,
    c0: T,
    mean: T,
}

/// Resolvent data of the Marchenko–Pastur law at `p = t² − λ₋`; `t < 0` selects the second sheet.
#[derive(Debug, Clone, Copy)]
pub struct MpBranch<T> {
    pub p: T,
    /// ⟨1/(p+λ)⟩ over the continuous part.
    pub g_plus: T,
    /// Including the zero atom, `g_plus + m0/p`, evaluated without cancellation.
    pub g_full: T,
}

fn same_sign<T: Real>(a: T, b: T) -> bool {
    (a >= T::zero()) == (b >= T::zero())
}

/// Marchenko–Pastur resolvents at signed parameter `t` (see [`MpBranch`]).
pub fn mp_branch<T: Real>(beta: T, t: T) -> MpBranch<T> {
    let one = T::one();
    let sb = beta.sqrt();
    let lm = (one - sb) * (one - sb);
    let p = t * t - lm;
    let r = t * (t * t + T::lit(4.0) * sb).sqrt();
    // G⁺ solves a quadratic whose discriminant is (p+λ₋)(p+λ₊); r carries the sheet sign.
    let mu = beta.min(one);
    let bstar = p + (one - beta).abs();
    let two = T::lit(2.0);
    let g_plus = if same_sign(r, bstar) {
        two * mu / (beta * (r + bstar))
    } else {
        (r - bstar) / (two * beta * p)
    };
    let g_full = if beta <= one {
        g_plus
    } else {
        let bb = one - beta + p;
        if same_sign(r, bb) {
            two / (r + bb)
        } else {
            (r - bb) / (two * beta * p)
        }
    };
    MpBranch { p, g_plus, g_full }
}

impl<T: Real> Spectrum<T> {
    /// Validating constructor. Atoms with equal locations (within [`MERGE_TOL`]) are merged.
    pub fn from_parts(beta: T, atoms: Vec<(T, T)>, continuous: Option<Continuous<T>>) -> Result<Self> {
        if !(beta > T::zero()) || !beta.is_finite() {
            return domain(format!("load beta must be positive and finite, got {beta}"));
        }
        for &(m, l) in &atoms {
            if !(m >= T::zero()) || !m.is_finite() {
                return domain(format!("atom mass must be nonnegative, got {m}"));
            }
            if !(l >= T::zero()) || !l.is_finite() {
                return domain(format!("atom location must be nonnegative, got {l}"));
            }
        }
        if let Some(c) = &continuous {
            if c.nodes.len() != c.weights.len() || c.nodes.is_empty() {
                return domain("continuous part needs matching, nonempty nodes and weights");
            }
            if c.nodes.iter().any(|&x| !(x > T::zero()) || !x.is_finite()) {
                return domain("continuous nodes must be positive");
            }
            if c.weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
                return domain("continuous weights must be nonnegative");
            }
        }
        let mut sorted = atoms;
        sorted.sort_by(|x, y| x.1.partial_cmp(&y.1).expect("finite locations"));
        let mut merged: Vec<(T, T)> = Vec::with_capacity(sorted.len());
        for (m, l) in sorted {
            match merged.last_mut() {
                Some(last) if (l - last.1).abs() < T::lit(MERGE_TOL) => last.0 = last.0 + m,
                _ => merged.push((m, l)),
            }
        }
        let zero_mass = merged.iter().filter(|a| a.1 == T::zero()).map(|a| a.0).sum::<T>();
        let cont_mass = continuous.as_ref().map_or(T::zero(), |c| c.weights.iter().copied().sum());
        let total = merged.iter().map(|a| a.0).sum::<T>() + cont_mass;
        let tol = T::lit(MASS_TOL).max(T::epsilon() * T::lit(100.0));
        if (total - T::one()).abs() > tol {
            return domain(format!("total mass {total} differs from 1"));
        }
        let nonzero = T::one() - zero_mass;
        if beta > T::one() && zero_mass < T::one() - T::one() / beta - tol {
            return domain(format!(
                "beta={beta} requires zero-eigenvalue mass >= {}, got {zero_mass}",
                T::one() - T::one() / beta
            ));
        }
        let mut c0 = T::one() - beta * nonzero;
        if c0.abs() < T::lit(1e-12).max(T::epsilon() * T::lit(64.0)) {
            c0 = T::zero();
        }
        let mean = merged.iter().map(|a| a.0 * a.1).sum::<T>()
            + continuous.as_ref().map_or(T::zero(), |c| c.nodes.iter().zip(&c.weights).map(|(&x, &w)| w * x).sum());
        Ok(Self { beta, atoms: merged, continuous, zero_mass, c0, mean })
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn atoms(&self) -> &[(T, T)] {
        &self.atoms
    }

    pub fn continuous(&self) -> Option<&Continuous<T>> {
        self.continuous.as_ref()
    }

    /// Mass of the atom at λ = 0.
    pub fn zero_mass(&self) -> T {
        self.zero_mass
    }

    /// `1 − β(1 − m0)`: the weight of the `ln Λ_η` term once the zero atom is split off.
    /// Exactly zero for rank-deficient laws such as WBES.
    pub fn rank_gap(&self) -> T {
        self.c0
    }

    /// ⟨λ⟩.
    pub fn mean(&self) -> T {
        self.mean
    }

    /// True for the Marchenko–Pastur law.
    pub fn is_marchenko_pastur(&self) -> bool {
        matches!(&self.continuous, Some(c) if c.kind == ContinuousKind::MarchenkoPastur)
    }

    /// Smallest positive point of the support (infinity for ρ = δ(0)).
    pub fn min_positive(&self) -> T {
        let a = self.atoms.iter().filter(|a| a.1 > T::zero() && a.0 > T::zero()).map(|a| a.1).fold(T::infinity(), T::min);
        match &self.continuous {
            Some(c) => a.min(c.lo),
            None => a,
        }
    }

    /// ⟨f(λ)⟩; errors if `f` is not finite at a point carrying mass.
    pub fn average(&self, mut f: impl FnMut(T) -> T) -> Result<T> {
        let mut acc = T::zero();
        for &(m, l) in &self.atoms {
            if m == T::zero() {
                continue;
            }
            let v = f(l);
            if !v.is_finite() {
                return Err(Error::Domain(format!("integrand not finite at atom λ={l} (mass {m})")));
            }
            acc = acc + m * v;
        }
        if let Some(c) = &self.continuous {
            for (&x, &w) in c.nodes.iter().zip(&c.weights) {
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::Domain(format!("integrand not finite at λ={x} in [{}, {}]", c.lo, c.hi)));
                }
                acc = acc + w * v;
            }
        }
        Ok(acc)
    }

    /// ⟨1/(p+λ)⟩ over the nonzero part of the law, principal branch (`p > −min_positive`).
    pub fn resolvent_plus(&self, p: T) -> T {
        let mut acc = T::zero();
        for &(m, l) in &self.atoms {
            if l > T::zero() {
                acc = acc + m / (p + l);
            }
        }
        match &self.continuous {
            Some(c) if c.kind == ContinuousKind::MarchenkoPastur => {
                let lm = c.lo;
                acc + mp_branch(self.beta, (p + lm).max(T::zero()).sqrt()).g_plus
            }
            Some(c) => acc + c.nodes.iter().zip(&c.weights).map(|(&x, &w)| w / (p + x)).sum::<T>(),
            None => acc,
        }
    }

    /// ⟨ln(1 + λ/p)⟩ over the nonzero part, for `p > 0`.
    pub fn log1p_plus(&self, p: T) -> T {
        let mut acc = T::zero();
        for &(m, l) in &self.atoms {
            if l > T::zero() {
                acc = acc + m * (l / p).ln_1p();
            }
        }
        if let Some(c) = &self.continuous {
            acc = acc + c.nodes.iter().zip(&c.weights).map(|(&x, &w)| w * (x / p).ln_1p()).sum::<T>();
        }
        acc
    }

    /// ⟨ln(p+λ)⟩ over the nonzero part, principal branch.
    ///
    /// The Marchenko–Pastur part is integrated by quadrature for `p ≥ 1`; below that the
    /// resolvent is integrated from `p = 1` along `t = √(p+λ₋)`, which stays accurate down to
    /// the spectral edge.
    pub fn log_plus(&self, p: T) -> T {
        let mut acc = T::zero();
        for &(m, l) in &self.atoms {
            if l > T::zero() {
                acc = acc + m * (p + l).ln();
            }
        }
        match &self.continuous {
            Some(c) if c.kind == ContinuousKind::MarchenkoPastur && p < T::one() => {
                acc + self.mp_log_from_reference(mp_t_of_p(c.lo, p))
            }
            Some(c) => acc + c.nodes.iter().zip(&c.weights).map(|(&x, &w)| w * (p + x).ln()).sum::<T>(),
            None => acc,
        }
    }

    /// Marchenko–Pastur continuous-part log average at signed `t ≥ 0` via the resolvent path
    /// integral from `p = 1`.
    pub(crate) fn mp_log_from_reference(&self, t: T) -> T {
        let c = self.continuous.as_ref().expect("Marchenko–Pastur part present");
        let one = T::one();
        let at_ref: T = c.nodes.iter().zip(&c.weights).map(|(&x, &w)| w * (one + x).ln()).sum();
        let t_ref = (one + c.lo).sqrt();
        let beta = self.beta;
        let two = T::lit(2.0);
        at_ref - integrate_legendre(96, t, t_ref, |s| two * s * mp_branch(beta, s).g_plus)
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: T) -> T {
        let mut acc: T = self.atoms.iter().filter(|a| a.1 <= x).map(|a| a.0).sum();
        if let Some(c) = &self.continuous {
            match c.kind {
                ContinuousKind::Tabulated => {
                    acc = acc + c.nodes.iter().zip(&c.weights).filter(|(&n, _)| n <= x).map(|(_, &w)| w).sum();
                }
                ContinuousKind::MarchenkoPastur => {
                    if x >= c.hi {
                        acc = acc + c.weights.iter().copied().sum();
                    } else if x > c.lo {
                        // λ = m − h cos θ removes the square-root edges.
                        let two = T::lit(2.0);
                        let (m, h) = ((c.lo + c.hi) / two, (c.hi - c.lo) / two);
                        let theta = ((m - x) / h).max(-T::one()).min(T::one()).acos();
                        let beta = self.beta;
                        let pi = T::PI();
                        acc = acc
                            + integrate_legendre(256, T::zero(), theta, |th| {
                                let s = th.sin();
                                let lam = m - h * th.cos();
                                h * h * s * s / (two * pi * beta * lam)
                            });
                    }
                }
            }
        }
        acc
    }

    /// Serializable description.
    pub fn to_doc(&self) -> SpectrumDoc {
        let continuous = self.continuous.as_ref().map(|c| match c.kind {
            ContinuousKind::MarchenkoPastur => ContinuousDoc::MarchenkoPastur { nodes: Some(c.nodes.len()) },
            ContinuousKind::Tabulated => ContinuousDoc::Tabulated {
                nodes: c.nodes.iter().map(|v| v.as_f64()).collect(),
                weights: c.weights.iter().map(|v| v.as_f64()).collect(),
            },
        });
        let atoms = self
            .atoms
            .iter()
            .filter(|a| !(self.is_marchenko_pastur() && a.1 == T::zero()))
            .map(|a| [a.0.as_f64(), a.1.as_f64()])
            .collect();
        SpectrumDoc { beta: self.beta.as_f64(), atoms, continuous }
    }

    /// Builds from a serializable description.
    pub fn from_doc(doc: &SpectrumDoc) -> Result<Self> {
        let beta = T::lit(doc.beta);
        match &doc.continuous {
            Some(ContinuousDoc::MarchenkoPastur { nodes }) => {
                if !doc.atoms.is_empty() {
                    return domain("Marchenko–Pastur documents carry no extra atoms");
                }
                make_marchenko_pastur_nodes(beta, nodes.unwrap_or(MP_DEFAULT_NODES))
            }
            other => {
                let atoms = doc.atoms.iter().map(|a| (T::lit(a[0]), T::lit(a[1]))).collect();
                let continuous = match other {
                    Some(ContinuousDoc::Tabulated { nodes, weights }) => Some(tabulated(nodes, weights)?),
                    _ => None,
                };
                Self::from_parts(beta, atoms, continuous)
            }
        }
    }
}

fn tabulated<T: Real>(nodes: &[f64], weights: &[f64]) -> Result<Continuous<T>> {
    if nodes.is_empty() || nodes.len() != weights.len() {
        return domain("tabulated continuous part needs matching nonempty nodes and weights");
    }
    let lo = nodes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Continuous {
        kind: ContinuousKind::Tabulated,
        lo: T::lit(lo),
        hi: T::lit(hi),
        nodes: nodes.iter().map(|&v| T::lit(v)).collect(),
        weights: weights.iter().map(|&v| T::lit(v)).collect(),
    })
}

pub(crate) fn mp_t_of_p<T: Real>(lo: T, p: T) -> T {
    (p + lo).max(T::zero()).sqrt()
}

/// JSON form: `{"beta": .., "atoms": [[mass, loc], ..], "continuous": {"kind": .., ..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDoc {
    pub beta: f64,
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousDoc {
    MarchenkoPastur {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes: Option<usize>,
    },
    /// Density given directly as a quadrature rule (weights absorb the density).
    Tabulated { nodes: Vec<f64>, weights: Vec<f64> },
}

/// Welch-bound-equality law: `(1 − 1/β)δ(λ) + (1/β)δ(λ − β)`, defined for β > 1.
pub fn make_wbes<T: Real>(beta: T) -> Result<Spectrum<T>> {
    if !(beta > T::one()) || !beta.is_finite() {
        return domain(format!("WBES spectrum requires beta > 1, got {beta}"));
    }
    let inv = T::one() / beta;
    Spectrum::from_parts(beta, vec![(T::one() - inv, T::zero()), (inv, beta)], None)
}

/// Marchenko–Pastur law with the default node count.
pub fn make_marchenko_pastur<T: Real>(beta: T) -> Result<Spectrum<T>> {
    make_marchenko_pastur_nodes(beta, MP_DEFAULT_NODES)
}

/// Marchenko–Pastur law for HᵀH with `H` of IID N(0, 1/N) entries.
///
/// The density is integrated in `s = √λ` with a Chebyshev rule of the second kind, which
/// absorbs the square-root edges exactly; the node count doubles until the mass and mean are
/// reproduced to near machine precision.
pub fn make_marchenko_pastur_nodes<T: Real>(beta: T, nodes: usize) -> Result<Spectrum<T>> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return domain(format!("Marchenko–Pastur law requires beta > 0, got {beta}"));
    }
    let b = beta.as_f64();
    let sb = b.sqrt();
    let (lo, hi) = ((1.0 - sb).powi(2), (1.0 + sb).powi(2));
    let m0 = (1.0 - 1.0 / b).max(0.0);
    let target = 1.0 - m0;
    let mut n = nodes.max(8);
    loop {
        let (xs, ws) = mp_rule(b, n);
        let mass: f64 = ws.iter().sum();
        let mean: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum();
        if ((mass - target).abs() < 1e-13 && (mean - 1.0).abs() < 1e-13) || n >= MP_MAX_NODES {
            if (mass - target).abs() > MASS_TOL {
                return Err(Error::Accuracy(format!("Marchenko–Pastur quadrature mass error {:e}", mass - target)));
            }
            let cont = Continuous {
                kind: ContinuousKind::MarchenkoPastur,
                lo: T::lit(lo),
                hi: T::lit(hi),
                nodes: xs.into_iter().map(T::lit).collect(),
                weights: ws.into_iter().map(T::lit).collect(),
            };
            let atoms = if m0 > 0.0 { vec![(T::lit(m0), T::zero())] } else { vec![] };
            return Spectrum::from_parts(beta, atoms, Some(cont));
        }
        n *= 2;
    }
}

fn mp_rule(b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let pi = std::f64::consts::PI;
    let sb = b.sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    if b == 1.0 {
        // In s = √λ the density becomes a semicircle on [0, 2]; extend evenly to [−2, 2].
        for i in 1..=n {
            let th = i as f64 * pi / (n as f64 + 1.0);
            let s = 2.0 * th.cos();
            xs.push(s * s);
            ws.push(2.0 * th.sin().powi(2) / (n as f64 + 1.0));
        }
    } else {
        let (sl, sh) = ((1.0 - sb).abs(), 1.0 + sb);
        let (c, h) = ((sl + sh) / 2.0, (sh - sl) / 2.0);
        for i in 1..=n {
            let th = i as f64 * pi / (n as f64 + 1.0);
            let s = c + h * th.cos();
            let g = ((sh + s) * (s + sl)).sqrt() / (pi * b * s);
            xs.push(s * s);
            ws.push(pi / (n as f64 + 1.0) * th.sin().powi(2) * h * h * g);
        }
    }
    (xs, ws)
}

/// Empirical law of a K×K Gram matrix HᵀH given its (up to min(N, K)) nonzero-capable
/// eigenvalues; the remaining `K − len` eigenvalues are zero.
pub fn make_empirical<T: Real>(eigenvalues: &[T], k: usize, beta: T) -> Result<Spectrum<T>> {
    if eigenvalues.len() > k {
        return domain(format!("{} eigenvalues exceed K = {k}", eigenvalues.len()));
    }
    if let Some(bad) = eigenvalues.iter().find(|&&l| !(l >= T::zero()) || !l.is_finite()) {
        return domain(format!("negative or non-finite eigenvalue {bad}"));
    }
    let kf = T::from_usize(k).unwrap();
    let mut atoms: Vec<(T, T)> = eigenvalues.iter().map(|&l| (T::one() / kf, l)).collect();
    if eigenvalues.len() < k {
        atoms.push((T::from_usize(k - eigenvalues.len()).unwrap() / kf, T::zero()));
    }
    Spectrum::from_parts(beta, atoms, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wbes_atoms_and_mean() {
        let s = make_wbes(2.0f64).unwrap();
        assert_eq!(s.atoms(), &[(0.5, 0.0), (0.5, 2.0)]);
        let s = make_wbes(1.1f64).unwrap();
        assert!((s.atoms()[0].0 - 0.0909090909).abs() < 1e-9);
        assert!((s.mean() - 1.0).abs() < 1e-15);
        assert_eq!(s.rank_gap(), 0.0);
        let s = make_wbes(1.0001f64).unwrap();
        assert!((s.zero_mass() - 1e-4).abs() < 1e-8);
        assert!(make_wbes(1.0f64).is_err());
        assert!(make_wbes(0.5f64).is_err());
    }

    #[test]
    fn wbes_averages() {
        let s = make_wbes(2.0f64).unwrap();
        assert!((s.average(|l| l).unwrap() - 1.0).abs() < 1e-15);
        assert!((s.average(|l| (1.0 + l).ln()).unwrap() - 0.549306144334).abs() < 1e-10);
        assert!(matches!(s.average(|l| l.ln()), Err(Error::Domain(_))));
    }

    #[test]
    fn mp_support_mass_and_moments() {
        let s = make_marchenko_pastur(1.0f64).unwrap();
        assert!(s.atoms().is_empty());
        let c = s.continuous().unwrap();
        assert!(c.lo.abs() < 1e-15 && (c.hi - 4.0).abs() < 1e-15);
        for &b in &[0.25f64, 0.5, 1.0, 1.1, 2.0, 4.0] {
            let s = make_marchenko_pastur(b).unwrap();
            assert!((s.average(|_| 1.0).unwrap() - 1.0).abs() < 1e-10, "beta {b}");
            assert!((s.mean() - 1.0).abs() < 1e-10, "beta {b}");
            assert!((s.average(|l| l * l).unwrap() - (1.0 + b)).abs() < 1e-9, "beta {b}");
            // third moment 1 + 3β + β²
            assert!((s.average(|l| l * l * l).unwrap() - (1.0 + 3.0 * b + b * b)).abs() < 1e-9);
        }
        let s = make_marchenko_pastur(4.0f64).unwrap();
        assert!((s.zero_mass() - 0.75).abs() < 1e-15);
        let c = s.continuous().unwrap();
        assert!((c.lo - 1.0).abs() < 1e-15 && (c.hi - 9.0).abs() < 1e-15);
        assert!(make_marchenko_pastur(0.0f64).is_err());
    }

    #[test]
    fn mp_resolvent_matches_quadrature() {
        for &b in &[0.5f64, 1.1, 2.0] {
            let s = make_marchenko_pastur(b).unwrap();
            let c = s.continuous().unwrap().clone();
            for &p in &[0.05f64, 0.3, 1.0, 7.0] {
                let q: f64 = c.nodes.iter().zip(&c.weights).map(|(x, w)| w / (p + x)).sum();
                let g = mp_branch(b, (p + c.lo).sqrt()).g_plus;
                assert!((g - q).abs() < 1e-10, "beta {b} p {p}: {g} vs {q}");
                let lq: f64 = c.nodes.iter().zip(&c.weights).map(|(x, w)| w * (p + x).ln()).sum();
                assert!((s.log_plus(p) - lq).abs() < 1e-10, "log beta {b} p {p}");
            }
        }
    }

    #[test]
    fn mp_full_resolvent_solves_quadratic_on_both_sheets() {
        for &b in &[0.5f64, 1.1, 2.0] {
            for &t in &[1.5f64, 0.4, 0.01, -0.01, -0.3, -1.2] {
                let br = mp_branch(b, t);
                let (p, g) = (br.p, br.g_full);
                let res = b * p * g * g + (1.0 - b + p) * g - 1.0;
                assert!(res.abs() < 1e-12 * (1.0 + g.abs() * (1.0 + p.abs())), "beta {b} t {t}: {res}");
                let m0 = (1.0 - 1.0 / b).max(0.0);
                if p.abs() > 1e-3 {
                    assert!((br.g_full - br.g_plus - m0 / p).abs() < 1e-10 * (1.0 + br.g_full.abs()));
                }
            }
        }
    }

    #[test]
    fn empirical_builds_and_merges() {
        let s = make_empirical(&[2.0f64], 2, 2.0).unwrap();
        assert_eq!(s.atoms(), &[(0.5, 0.0), (0.5, 2.0)]);
        let s = make_empirical(&[1.0f64, 1.0, 1.0], 3, 1.0).unwrap();
        assert_eq!(s.atoms().len(), 1);
        assert!((s.atoms()[0].0 - 1.0).abs() < 1e-15);
        assert!(make_empirical(&[-1.0f64], 2, 2.0).is_err());
    }

    #[test]
    fn cdf_reaches_one() {
        let s = make_marchenko_pastur(2.0f64).unwrap();
        assert!((s.cdf(-1.0)).abs() < 1e-15);
        assert!((s.cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((s.cdf(100.0) - 1.0).abs() < 1e-10);
        let c = s.continuous().unwrap();
        assert!((s.cdf(c.hi * 0.9999999) - 1.0).abs() < 1e-6);
        let mid = s.cdf(2.0);
        let by_nodes: f64 = 0.5 + c.nodes.iter().zip(&c.weights).filter(|(x, _)| **x <= 2.0).map(|(_, w)| w).sum::<f64>();
        assert!((mid - by_nodes).abs() < 0.01);
    }

    #[test]
    fn json_round_trip() {
        for s in [make_wbes(1.1f64).unwrap(), make_marchenko_pastur(2.0f64).unwrap()] {
            let txt = serde_json::to_string(&s.to_doc()).unwrap();
            let doc: SpectrumDoc = serde_json::from_str(&txt).unwrap();
            let back = Spectrum::<f64>::from_doc(&doc).unwrap();
            assert_eq!(back.atoms(), s.atoms());
            assert!((back.mean() - s.mean()).abs() < 1e-15);
        }
        let doc: SpectrumDoc = serde_json::from_str(
            r#"{"beta": 0.5, "atoms": [[0.5, 1.0]], "continuous": {"kind": "tabulated", "nodes": [2.0], "weights": [0.5]}}"#,
        )
        .unwrap();
        let s = Spectrum::<f64>::from_doc(&doc).unwrap();
        assert!((s.mean() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn generic_over_f32() {
        let s = make_wbes(2.0f32).unwrap();
        assert!((s.average(|l| l).unwrap() - 1.0).abs() < 1e-6);
        let m = make_marchenko_pastur(0.5f32).unwrap();
        assert!((m.mean() - 1.0).abs() < 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn unit_mass_for_every_constructor(b in 1.0001f64..6.0) {
            for s in [make_wbes(b).unwrap(), make_marchenko_pastur(b).unwrap()] {
                proptest::prop_assert!((s.average(|_| 1.0).unwrap() - 1.0).abs() < 1e-10);
                proptest::prop_assert!(s.zero_mass() >= 1.0 - 1.0 / b - 1e-10);
                proptest::prop_assert!(s.mean() >= 0.0);
            }
        }
    }
}
