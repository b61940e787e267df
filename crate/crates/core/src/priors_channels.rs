//! Factorizable priors P(x) and memoryless likelihoods P(y|Δ), with the scalar denoisers the
//! decoder and the replica solver consume.

use crate::error::{domain, Error, Result};
use crate::quad::{gauss_hermite_normal, integrate_legendre, normal_expect, normal_expect_vec, HERMITE_LADDER};
use crate::scalar::{ln_cosh, log_sum_exp, sech2, Real};
use crate::special::{ln_q, normal_pdf, q_function};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Relative change between Gauss–Hermite node counts accepted by the channel denoiser.
pub const CHANNEL_QUAD_TOL: f64 = 1e-7;
/// Relative change accepted by the replica-side scalar expectations.
pub const SCALAR_QUAD_TOL: f64 = 1e-10;

/// Zero-mean factorizable prior on the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior<T = f64> {
    /// Equiprobable ±1.
    Binary,
    /// N(0, var).
    Gaussian { var: T },
    /// Discrete distribution on `values` with probabilities `probs`.
    Tabulated { values: Vec<T>, probs: Vec<T> },
}

impl<T: Real> Prior<T> {
    pub fn gaussian(var: T) -> Result<Self> {
        let p = Prior::Gaussian { var };
        p.validate()?;
        Ok(p)
    }

    pub fn tabulated(values: Vec<T>, probs: Vec<T>) -> Result<Self> {
        let p = Prior::Tabulated { values, probs };
        p.validate()?;
        Ok(p)
    }

    /// Checks parameters; required after deserializing.
    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::Binary => Ok(()),
            Prior::Gaussian { var } => {
                if !(var.as_f64() > 0.0 && var.is_finite()) {
                    return domain(format!("gaussian prior variance must be positive, got {var}"));
                }
                Ok(())
            }
            Prior::Tabulated { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return domain("tabulated prior needs matching nonempty values and probs");
                }
                if values.iter().any(|v| !v.is_finite()) || probs.iter().any(|p| !(p.as_f64() >= 0.0)) {
                    return domain("tabulated prior values must be finite and probs nonnegative");
                }
                let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return domain(format!("tabulated prior probabilities sum to {total}"));
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v.as_f64() * p.as_f64()).sum();
                let scale: f64 = values.iter().map(|v| v.as_f64().abs()).fold(1.0, f64::max);
                if mean.abs() > 1e-12 * scale {
                    return Err(Error::Unsupported(format!("nonzero-mean prior (mean {mean:e})")));
                }
                Ok(())
            }
        }
    }

    /// T_x = E x².
    pub fn second_moment(&self) -> T {
        match self {
            Prior::Binary => T::one(),
            Prior::Gaussian { var } => *var,
            Prior::Tabulated { values, probs } => values.iter().zip(probs).map(|(&v, &p)| p * v * v).sum(),
        }
    }

    /// ln Tr_x P(x) exp(−χ̂x²/2 + hx).
    pub fn log_partition(&self, h: T, chi_hat: T) -> T {
        let half = T::lit(0.5);
        match self {
            Prior::Binary => -half * chi_hat + ln_cosh(h),
            Prior::Gaussian { var } => {
                let d = T::one() + chi_hat * *var;
                -half * d.ln() + half * h * h * *var / d
            }
            Prior::Tabulated { values, probs } => {
                let logs: Vec<T> = tilted_logs(values, probs, h, chi_hat);
                log_sum_exp(&logs)
            }
        }
    }

    /// Mean and variance of the tilted measure P(x) exp(−χ̂x²/2 + hx).
    pub fn denoise(&self, h: T, chi_hat: T) -> (T, T) {
        match self {
            Prior::Binary => (h.tanh(), sech2(h)),
            Prior::Gaussian { var } => {
                let d = T::one() + chi_hat * *var;
                (h * *var / d, *var / d)
            }
            Prior::Tabulated { values, probs } => {
                let logs = tilted_logs(values, probs, h, chi_hat);
                let top = logs.iter().copied().fold(T::neg_infinity(), T::max);
                let w: Vec<T> = logs.iter().map(|&l| (l - top).exp()).collect();
                let z: T = w.iter().copied().sum();
                let mean: T = w.iter().zip(values).map(|(&w, &v)| w * v).sum::<T>() / z;
                let var: T = w.iter().zip(values).map(|(&w, &v)| w * (v - mean) * (v - mean)).sum::<T>() / z;
                (mean, var)
            }
        }
    }

    /// Minimum mean-square error of x₀ observed through h = q̂x₀ + √q̂ n, n ~ N(0,1).
    pub fn scalar_mmse(&self, q_hat: T) -> Result<T> {
        check_snr(q_hat)?;
        match self {
            Prior::Binary => Ok(T::lit(binary_gauss_average(q_hat.as_f64(), sech2, sech2, false)?)),
            Prior::Gaussian { var } => Ok(*var / (T::one() + q_hat * *var)),
            Prior::Tabulated { .. } => self.tabulated_average(q_hat, |h| self.denoise(h, q_hat).1),
        }
    }

    /// φ(q̂) = E ln Z(q̂x₀ + √q̂ n, q̂), the scalar free entropy. Its derivative is (T_x − mmse)/2.
    pub fn scalar_free_entropy(&self, q_hat: T) -> Result<T> {
        check_snr(q_hat)?;
        match self {
            Prior::Binary => {
                let q = q_hat.as_f64();
                // ln cosh u = |u| − ln 2 + ln(1 + e^{−2|u|}); E|u| is closed form.
                let local = binary_gauss_average(q, |u: f64| ln_cosh(u), |u: f64| (-2.0 * u.abs()).exp().ln_1p(), true)?;
                Ok(T::lit(local - 0.5 * q))
            }
            Prior::Gaussian { var } => {
                let s = q_hat * *var;
                Ok(T::lit(0.5) * (s - s.ln_1p()))
            }
            Prior::Tabulated { .. } => self.tabulated_average(q_hat, |h| self.log_partition(h, q_hat)),
        }
    }

    /// E f(q̂x₀ + √q̂ n) over x₀ ~ P and n ~ N(0,1).
    ///
    /// The tilted posterior switches between support points over a width of order
    /// 1/(√q̂·span) in n, which Gauss–Hermite cannot resolve once q̂ is moderate. Composite
    /// Gauss–Legendre panels sized to that width are used instead, and the panel count is
    /// doubled once as an accuracy check.
    fn tabulated_average(&self, q_hat: T, f: impl Fn(T) -> T) -> Result<T> {
        let Prior::Tabulated { values, probs } = self else { unreachable!() };
        let q = q_hat.as_f64();
        let sq = q.sqrt();
        let vmax = values.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
        let half_range = 12.0 + sq * vmax;
        let base = ((2.0 * half_range) / (0.5 / (1.0 + 2.0 * sq * vmax))).ceil() as usize;
        let eval = |panels: usize| -> f64 {
            let width = 2.0 * half_range / panels as f64;
            let mut acc = 0.0;
            for (&x0, &p) in values.iter().zip(probs) {
                if p == T::zero() {
                    continue;
                }
                let mut part = 0.0;
                for i in 0..panels {
                    let a = -half_range + width * i as f64;
                    part += integrate_legendre(10, a, a + width, |n: f64| {
                        f(q_hat * x0 + T::lit(sq * n)).as_f64() * normal_pdf(n)
                    });
                }
                acc += p.as_f64() * part;
            }
            acc
        };
        let coarse = eval(base);
        let fine = eval(2 * base);
        let change = (fine - coarse).abs() / fine.abs().max(1e-300);
        if change > SCALAR_QUAD_TOL && (fine - coarse).abs() > 1e-300 {
            return Err(Error::Accuracy(format!("tabulated prior expectation changed by {change:e} on refinement")));
        }
        Ok(T::lit(fine))
    }

    /// `k` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<T>
    where
        StandardNormal: Distribution<T>,
    {
        match self {
            Prior::Binary => (0..k).map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() }).collect(),
            Prior::Gaussian { var } => {
                let s = var.sqrt();
                (0..k).map(|_| s * StandardNormal.sample(rng)).collect()
            }
            Prior::Tabulated { values, probs } => (0..k)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for (&v, &p) in values.iter().zip(probs) {
                        acc += p.as_f64();
                        if u < acc {
                            return v;
                        }
                    }
                    values[values.len() - 1]
                })
                .collect(),
        }
    }
}

fn tilted_logs<T: Real>(values: &[T], probs: &[T], h: T, chi_hat: T) -> Vec<T> {
    let half = T::lit(0.5);
    values
        .iter()
        .zip(probs)
        .map(|(&v, &p)| if p > T::zero() { p.ln() - half * chi_hat * v * v + h * v } else { T::neg_infinity() })
        .collect()
}

fn check_snr<T: Real>(q_hat: T) -> Result<()> {
    if q_hat.as_f64() >= 0.0 && q_hat.is_finite() {
        Ok(())
    } else {
        domain(format!("effective SNR must be finite and nonnegative, got {q_hat}"))
    }
}

/// E f(u) for u ~ N(q, q). `full` is f itself; `local` is f minus (|u| − ln 2) when `linear`
/// is set, else f again. Either way `local` must decay like e^{−2|u|}.
///
/// For small q the Gaussian in n is wide relative to the features of f and plain Gauss–Hermite
/// suffices. For larger q the sech²-scale structure sits far out in the Gaussian tail, so the
/// local part is integrated in u on [−40, 40] with fixed panels instead.
fn binary_gauss_average(q: f64, full: impl Fn(f64) -> f64, local: impl Fn(f64) -> f64, linear: bool) -> Result<f64> {
    if q == 0.0 {
        return Ok(full(0.0));
    }
    let s = q.sqrt();
    if q <= 1.0 {
        return normal_expect(SCALAR_QUAD_TOL, 1e-14, |n: f64| full(q + s * n));
    }
    let integrand = |u: f64| local(u) * normal_pdf((u - q) / s) / s;
    let mut acc = 0.0;
    for i in 0..160 {
        let a = -40.0 + 0.5 * i as f64;
        acc += integrate_legendre(10, a, a + 0.5, integrand);
    }
    if linear {
        // E|u| − ln 2 for u ~ N(q, q).
        acc += q * (1.0 - 2.0 * q_function(s)) + 2.0 * s * normal_pdf(s) - std::f64::consts::LN_2;
    }
    Ok(acc)
}

/// Memoryless channel P(y|Δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel<T = f64> {
    /// y = Δ + N(0, σ²).
    Gaussian { sigma2: T },
    /// y = index of the bin of Δ + N(0, σ²) among the sorted `thresholds` (outputs 0..=L).
    /// Stands in for an arbitrary tabulated likelihood: its denoiser always goes through
    /// quadrature.
    Quantized { sigma2: T, thresholds: Vec<T> },
}

/// Replica-side statistics of the output channel at a given conjugate overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputTerms<T> {
    /// E[g_out²], the overlap of the output field.
    pub q_u: T,
    /// E Σ_y Z_out ln Z_out (a density integral for continuous y).
    pub phi: T,
}

impl<T: Real> ChannelModel<T> {
    pub fn gaussian(sigma2: T) -> Result<Self> {
        let c = ChannelModel::Gaussian { sigma2 };
        c.validate()?;
        Ok(c)
    }

    pub fn quantized(sigma2: T, thresholds: Vec<T>) -> Result<Self> {
        let c = ChannelModel::Quantized { sigma2, thresholds };
        c.validate()?;
        Ok(c)
    }

    /// Checks parameters; required after deserializing.
    pub fn validate(&self) -> Result<()> {
        let s2 = self.sigma2();
        if !(s2.as_f64() > 0.0 && s2.is_finite()) {
            return domain(format!("noise variance must be positive, got {s2}"));
        }
        if let ChannelModel::Quantized { thresholds, .. } = self {
            if thresholds.is_empty() || thresholds.iter().any(|t| !t.is_finite()) {
                return domain("quantized channel needs at least one finite threshold");
            }
            if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
                return domain("quantizer thresholds must be strictly increasing");
            }
        }
        Ok(())
    }

    /// Noise variance σ² before any quantization.
    pub fn sigma2(&self) -> T {
        match self {
            ChannelModel::Gaussian { sigma2 } | ChannelModel::Quantized { sigma2, .. } => *sigma2,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, ChannelModel::Gaussian { .. })
    }

    /// ln P(y|Δ) and its first two derivatives in Δ.
    pub fn log_likelihood(&self, y: T, delta: T) -> Result<(T, T, T)> {
        match self {
            ChannelModel::Gaussian { sigma2 } => {
                let r = y - delta;
                let l = -T::lit(0.5) * ((T::TAU() * *sigma2).ln() + r * r / *sigma2);
                Ok((l, r / *sigma2, -sigma2.recip()))
            }
            ChannelModel::Quantized { sigma2, thresholds } => quantized_log_likelihood(thresholds, *sigma2, y, delta),
        }
    }

    /// Mean ∂_h ln E_s P(y|h + √χ̂ s) and curvature −∂²_h of the same.
    pub fn denoise(&self, y: T, h: T, chi_hat: T) -> Result<(T, T)> {
        match self {
            ChannelModel::Gaussian { sigma2 } => {
                let v = *sigma2 + chi_hat;
                if !(v.as_f64() > 0.0) {
                    return domain(format!("σ² + χ̂ must be positive, got {v}"));
                }
                Ok(((y - h) / v, v.recip()))
            }
            ChannelModel::Quantized { .. } => self.denoise_quadrature(y, h, chi_hat),
        }
    }

    /// Quadrature route of [`denoise`](Self::denoise), valid for every channel.
    pub fn denoise_quadrature(&self, y: T, h: T, chi_hat: T) -> Result<(T, T)> {
        if chi_hat.as_f64() < 0.0 || !chi_hat.is_finite() {
            return domain(format!("χ̂ must be finite and nonnegative, got {chi_hat}"));
        }
        if chi_hat == T::zero() {
            let (_, d1, d2) = self.log_likelihood(y, h)?;
            return Ok((d1, -d2));
        }
        let sc = chi_hat.sqrt();
        let eval = |n: usize| -> Result<(T, T)> {
            let rule = gauss_hermite_normal(n);
            let mut logs = Vec::with_capacity(n);
            let mut d = Vec::with_capacity(n);
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (l, d1, d2) = self.log_likelihood(y, h + sc * T::lit(z))?;
                logs.push(T::lit(w.ln()) + l);
                d.push((d1, d2));
            }
            let lz = log_sum_exp(&logs);
            if !lz.is_finite() {
                return Err(Error::Numerical(format!("channel evidence underflow at y={y}, h={h}")));
            }
            let (mut g, mut s2) = (T::zero(), T::zero());
            for (&l, &(d1, d2)) in logs.iter().zip(&d) {
                let pi = (l - lz).exp();
                if pi > T::zero() {
                    g = g + pi * d1;
                    s2 = s2 + pi * (d2 + d1 * d1);
                }
            }
            Ok((g, g * g - s2))
        };
        let mut prev = eval(HERMITE_LADDER[0])?;
        let mut worst = f64::INFINITY;
        for &n in &HERMITE_LADDER[1..] {
            let cur = eval(n)?;
            let rel = |a: T, b: T| (a - b).as_f64().abs() / a.as_f64().abs().max(1e-12);
            worst = rel(cur.0, prev.0).max(rel(cur.1, prev.1));
            if worst < CHANNEL_QUAD_TOL {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::Accuracy(format!(
            "channel denoiser quadrature changed by {worst:e} at {} nodes",
            HERMITE_LADDER[HERMITE_LADDER.len() - 1]
        )))
    }

    /// Total probability of the outputs at Δ, by Gauss–Hermite in y for the Gaussian channel.
    pub fn likelihood_mass(&self, delta: T) -> Result<T> {
        match self {
            ChannelModel::Gaussian { sigma2 } => {
                let s = sigma2.sqrt();
                // y = Δ + s z: the density times dy/dz equals the normal weight.
                normal_expect(1e-12, 1.0, |z: T| {
                    let y = delta + s * z;
                    let (l, _, _) = self.log_likelihood(y, delta).expect("finite gaussian likelihood");
                    (l + (T::TAU() * *sigma2).ln() * T::lit(0.5) + T::lit(0.5) * z * z).exp()
                })
            }
            ChannelModel::Quantized { thresholds, .. } => {
                let mut total = T::zero();
                for j in 0..=thresholds.len() {
                    total = total + self.log_likelihood(T::lit(j as f64), delta)?.0.exp();
                }
                Ok(total)
            }
        }
    }

    /// q_u = E[g_out²] and E Σ_y Z_out ln Z_out for a Gaussian output field of total variance
    /// `t_hat_u`, of which `q_hat_u` is known.
    pub fn output_terms(&self, q_hat_u: T, t_hat_u: T) -> Result<OutputTerms<T>> {
        let v = t_hat_u - q_hat_u;
        match self {
            ChannelModel::Gaussian { sigma2 } => {
                let w = *sigma2 + v;
                if !(w.as_f64() > 0.0) {
                    return domain(format!("σ² + T̂u − q̂u must be positive, got {w}"));
                }
                Ok(OutputTerms { q_u: w.recip(), phi: -T::lit(0.5) * (T::TAU() * T::E() * w).ln() })
            }
            ChannelModel::Quantized { sigma2, thresholds } => {
                if q_hat_u.as_f64() < 0.0 || v.as_f64() < -1e-14 * t_hat_u.as_f64().abs() {
                    return domain(format!("need 0 ≤ q̂u ≤ T̂u, got q̂u={q_hat_u}, T̂u={t_hat_u}"));
                }
                // Z_out is the same quantizer with the noise variance inflated by T̂u − q̂u.
                let s2 = *sigma2 + v.max(T::zero());
                let sq = q_hat_u.sqrt();
                let outs = thresholds.len() + 1;
                let [q_u, phi] = normal_expect_vec(61, SCALAR_QUAD_TOL, 1e-12, |z: T| {
                    let w = sq * z;
                    let (mut a, mut b) = (T::zero(), T::zero());
                    for j in 0..outs {
                        let (l, d1, _) =
                            quantized_log_likelihood(thresholds, s2, T::lit(j as f64), w).expect("valid output index");
                        let p = l.exp();
                        if p > T::zero() {
                            a = a + p * d1 * d1;
                            b = b + p * l;
                        }
                    }
                    [a, b]
                })?;
                Ok(OutputTerms { q_u, phi })
            }
        }
    }

    /// E_Δ Σ_y P(y|Δ) ln P(y|Δ) for Δ ~ N(0, T̂u).
    pub fn output_entropy_term(&self, t_hat_u: T) -> Result<T> {
        Ok(self.output_terms(t_hat_u, t_hat_u)?.phi)
    }

    /// One output per entry of `delta`.
    pub fn sample<R: Rng + ?Sized>(&self, delta: &[T], rng: &mut R) -> Vec<T>
    where
        StandardNormal: Distribution<T>,
    {
        let s = self.sigma2().sqrt();
        match self {
            ChannelModel::Gaussian { .. } => delta.iter().map(|&d| d + s * StandardNormal.sample(rng)).collect(),
            ChannelModel::Quantized { thresholds, .. } => delta
                .iter()
                .map(|&d| {
                    let r = d + s * StandardNormal.sample(rng);
                    T::lit(thresholds.iter().filter(|&&t| t <= r).count() as f64)
                })
                .collect(),
        }
    }
}

fn quantized_log_likelihood<T: Real>(thresholds: &[T], sigma2: T, y: T, delta: T) -> Result<(T, T, T)> {
    let yf = y.as_f64();
    let l = thresholds.len();
    if !(yf >= 0.0 && yf <= l as f64 && yf.fract() == 0.0) {
        return domain(format!("quantized output must be an integer in 0..={l}, got {y}"));
    }
    let j = yf as usize;
    let s = sigma2.sqrt();
    let ua = if j == 0 { T::neg_infinity() } else { (thresholds[j - 1] - delta) / s };
    let ub = if j == l { T::infinity() } else { (thresholds[j] - delta) / s };
    let lp = if ua >= T::zero() {
        ln_q_diff(ua, ub)
    } else if ub <= T::zero() {
        ln_q_diff(-ub, -ua)
    } else {
        (-q_function(-ua) - q_function(ub)).ln_1p()
    };
    let half_ln_tau = T::lit(0.5) * T::TAU().ln();
    let term = |u: T| -> (T, T) {
        if u.is_infinite() {
            (T::zero(), T::zero())
        } else {
            let r = (-T::lit(0.5) * u * u - half_ln_tau - lp).exp();
            (r, u * r)
        }
    };
    let (ra, sa) = term(ua);
    let (rb, sb) = term(ub);
    let d1 = (ra - rb) / s;
    let d2 = (sa - sb) / sigma2 - d1 * d1;
    Ok((lp, d1, d2))
}

/// ln(Q(a) − Q(b)) for 0 ≤ a ≤ b.
fn ln_q_diff<T: Real>(a: T, b: T) -> T {
    let la = ln_q(a);
    let lb = ln_q(b);
    la + (-(lb - la).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type P = Prior<f64>;
    type C = ChannelModel<f64>;

    #[test]
    fn prior_denoise_examples() {
        let b = P::Binary;
        assert_eq!(b.denoise(0.0, 3.0), (0.0, 1.0));
        let (m, v) = b.denoise(2.0, 5.0);
        assert!((m - 0.964027580075817).abs() < 1e-14 && (v - 0.0706508248).abs() < 1e-9);
        let (m, v) = P::gaussian(1.0).unwrap().denoise(1.0, 1.0);
        assert!((m - 0.5).abs() < 1e-15 && (v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tabulated_binary_matches_binary() {
        let t = P::tabulated(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        for &(h, c) in &[(0.3, 0.0), (-2.0, 4.0), (400.0, 1.0), (-650.0, 2.0)] {
            let (m1, v1) = t.denoise(h, c);
            let (m2, v2) = P::Binary.denoise(h, c);
            assert!((m1 - m2).abs() < 1e-14 && (v1 - v2).abs() < 1e-14, "h={h}");
            assert!((t.log_partition(h, c) - P::Binary.log_partition(h, c)).abs() < 1e-12 * h.abs().max(1.0));
        }
        for &q in &[0.3, 2.0, 8.0] {
            let a = t.scalar_mmse(q).unwrap();
            let b = P::Binary.scalar_mmse(q).unwrap();
            assert!((a - b).abs() < 1e-8 * b, "q={q}: {a} vs {b}");
        }
    }

    #[test]
    fn tabulated_rejects_bad_tables() {
        assert!(P::tabulated(vec![1.0, -1.0], vec![0.5, 0.6]).is_err());
        assert!(P::tabulated(vec![1.0, -1.0], vec![-0.5, 1.5]).is_err());
        assert!(matches!(P::tabulated(vec![0.0, 2.0], vec![0.5, 0.5]), Err(Error::Unsupported(_))));
        let p = P::tabulated(vec![-3.0, 0.0, 3.0], vec![0.25, 0.5, 0.25]).unwrap();
        assert!((p.second_moment() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn denoisers_finite_for_large_fields() {
        let t = P::tabulated(vec![-3.0, -1.0, 1.0, 3.0], vec![0.25; 4]).unwrap();
        for &h in &[-500.0, 500.0, 699.0] {
            let (m, v) = t.denoise(h, 0.5);
            assert!(m.is_finite() && v.is_finite() && v >= 0.0);
            let (m, v) = P::Binary.denoise(h, 0.5);
            assert!(m.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn binary_mmse_matches_direct_quadrature() {
        // Simpson on a wide n-grid, independent of the u-substitution used in the code.
        for &q in &[0.05f64, 0.7, 1.5, 7.9, 30.0] {
            let n = 400_000;
            let (a, b) = (-12.0f64, 12.0f64);
            let hstep = (b - a) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let x = a + hstep * i as f64;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * sech2(q + q.sqrt() * x) * normal_pdf(x);
            }
            acc *= hstep / 3.0;
            let got = P::Binary.scalar_mmse(q).unwrap();
            assert!((got - acc).abs() < 1e-11 * acc.max(1e-6), "q={q}: {got} vs {acc}");
        }
    }

    #[test]
    fn free_entropy_derivative_is_half_overlap() {
        let priors = [
            P::Binary,
            P::gaussian(2.0).unwrap(),
            P::tabulated(vec![-2.0, 0.0, 2.0], vec![0.3, 0.4, 0.3]).unwrap(),
        ];
        for p in &priors {
            for &q in &[0.2, 0.9, 1.1, 4.0] {
                let h = 1e-4;
                let d = (p.scalar_free_entropy(q + h).unwrap() - p.scalar_free_entropy(q - h).unwrap()) / (2.0 * h);
                let want = 0.5 * (p.second_moment() - p.scalar_mmse(q).unwrap());
                assert!((d - want).abs() < 1e-7, "{p:?} q={q}: {d} vs {want}");
            }
        }
    }

    #[test]
    fn gaussian_channel_examples() {
        let c = C::gaussian(0.1).unwrap();
        let (g, k) = c.denoise(1.0, 0.0, 0.4).unwrap();
        assert!((g - 2.0).abs() < 1e-14 && (k - 2.0).abs() < 1e-14);
        let c = C::gaussian(1.0).unwrap();
        let (g, k) = c.denoise(0.7, 0.7, 3.0).unwrap();
        assert!(g == 0.0 && (k - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_quadrature_matches_closed_form() {
        for &(s2, y, h, c) in &[(0.1, 1.0, 0.0, 0.4), (1.0, -0.3, 0.5, 2.0), (0.5, 2.0, -1.0, 0.05)] {
            let ch = C::gaussian(s2).unwrap();
            let (g0, k0) = ch.denoise(y, h, c).unwrap();
            let (g1, k1) = ch.denoise_quadrature(y, h, c).unwrap();
            assert!((g0 - g1).abs() < 1e-9 && (k0 - k1).abs() < 1e-9, "{g0} {g1} {k0} {k1}");
            // Effective noise recovered from the curvature is σ² itself.
            assert!((1.0 / k1 - c - s2).abs() < 1e-9);
        }
    }

    #[test]
    fn quantized_denoiser_matches_inflated_closed_form() {
        let th = vec![-1.0, 0.0, 1.0];
        let c = C::quantized(0.2, th.clone()).unwrap();
        for &(y, h, chi) in &[(0.0, 0.3, 0.5), (2.0, -0.4, 0.1), (3.0, 1.5, 1.0), (1.0, 5.0, 0.3)] {
            let (g, k) = c.denoise(y, h, chi).unwrap();
            // Smoothing Φ-differences by an independent Gaussian only inflates the variance.
            let (_, d1, d2) = quantized_log_likelihood(&th, 0.2 + chi, y, h).unwrap();
            assert!((g - d1).abs() < 1e-7 * d1.abs().max(1.0), "y={y}: {g} vs {d1}");
            assert!((k + d2).abs() < 1e-7 * d2.abs().max(1.0), "y={y}: {k} vs {}", -d2);
        }
    }

    #[test]
    fn quantized_log_likelihood_derivatives_by_differences() {
        let th = vec![-0.5f64, 0.7];
        for &(y, d) in &[(0.0, 0.2), (1.0, -2.0), (2.0, 1.0), (0.0, 9.0), (2.0, -9.0)] {
            let (l, d1, d2) = quantized_log_likelihood(&th, 0.3, y, d).unwrap();
            let h = 1e-4;
            let lp = quantized_log_likelihood(&th, 0.3, y, d + h).unwrap();
            let lm = quantized_log_likelihood(&th, 0.3, y, d - h).unwrap();
            assert!(((lp.0 - lm.0) / (2.0 * h) - d1).abs() < 1e-6 * d1.abs().max(1.0));
            assert!(((lp.0 - 2.0 * l + lm.0) / (h * h) - d2).abs() < 1e-4 * d2.abs().max(1.0));
        }
        // Deep tail stays finite.
        let (l, d1, _) = quantized_log_likelihood(&th, 0.01, 2.0, -30.0).unwrap();
        assert!(l.is_finite() && d1.is_finite() && l < -1e4);
    }

    #[test]
    fn likelihoods_are_normalized() {
        for c in [C::gaussian(0.3).unwrap(), C::quantized(0.3, vec![-1.0, 0.2, 2.0]).unwrap()] {
            for &d in &[-2.0, 0.0, 0.4, 3.0] {
                assert!((c.likelihood_mass(d).unwrap() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn output_terms_derivative_is_half_overlap() {
        for c in [C::gaussian(0.4).unwrap(), C::quantized(0.4, vec![-0.5, 0.5]).unwrap()] {
            let t = 1.5;
            for &q in &[0.3, 1.0] {
                let h = 1e-4;
                let d = (c.output_terms(q + h, t).unwrap().phi - c.output_terms(q - h, t).unwrap().phi) / (2.0 * h);
                let want = 0.5 * c.output_terms(q, t).unwrap().q_u;
                assert!((d - want).abs() < 1e-7, "{c:?} q={q}: {d} vs {want}");
            }
        }
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 100_000;
        let x = P::Binary.sample(k, &mut rng);
        let m: f64 = x.iter().sum::<f64>() / k as f64;
        let m2: f64 = x.iter().map(|v| v * v).sum::<f64>() / k as f64;
        let tol = 4.0 / (k as f64).sqrt();
        assert!(m.abs() < tol && (m2 - 1.0).abs() < tol);

        let c = C::gaussian(0.25).unwrap();
        let y = c.sample(&vec![0.0; k], &mut rng);
        let var = y.iter().map(|v| v * v).sum::<f64>() / k as f64;
        assert!((var - 0.25).abs() < 0.0025);

        let c = C::gaussian(1e-300).unwrap();
        assert_eq!(c.sample(&[1.0, -1.0], &mut rng), vec![1.0, -1.0]);

        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(P::Binary.sample(50, &mut r1), P::Binary.sample(50, &mut r2));
    }

    #[test]
    fn config_form_round_trips() {
        let p: P = serde_json::from_str(r#"{"kind":"binary"}"#).unwrap();
        assert_eq!(p, P::Binary);
        let c: C = serde_json::from_str(r#"{"kind":"gaussian","sigma2":0.1}"#).unwrap();
        assert_eq!(c, C::Gaussian { sigma2: 0.1 });
        let q = C::quantized(0.5, vec![0.0]).unwrap();
        let back: C = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn f32_binary_prior() {
        let (m, v) = Prior::<f32>::Binary.denoise(2.0, 5.0);
        assert!((m - 0.96403).abs() < 1e-5 && (v - 0.07065).abs() < 1e-5);
        let e = Prior::<f32>::Binary.scalar_mmse(2.0).unwrap();
        assert!((e - P::Binary.scalar_mmse(2.0).unwrap() as f32).abs() < 1e-5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn variance_nonnegative_and_bounded(h in -500.0f64..500.0, c in 0.0f64..50.0) {
                let t = P::tabulated(vec![-2.0, -0.5, 0.5, 2.0], vec![0.1, 0.4, 0.4, 0.1]).unwrap();
                // Tilting can raise the variance of a heavy-tailed table above T_x, never above max x².
                for (p, bound) in [(P::Binary, 1.0), (t, 4.0)] {
                    let (m, v) = p.denoise(h, c);
                    prop_assert!(m.is_finite() && v >= 0.0);
                    let (_, v0) = p.denoise(h, 0.0);
                    prop_assert!(v0 <= bound + 1e-12);
                    prop_assert!((p.denoise(0.0, 0.0).1 - p.second_moment()).abs() < 1e-12);
                }
            }

            #[test]
            fn gaussian_channel_noise_identity(s2 in 1e-3f64..10.0, c in 0.0f64..10.0, y in -5.0f64..5.0, h in -5.0f64..5.0) {
                let ch = C::gaussian(s2).unwrap();
                let (_, k) = ch.denoise(y, h, c).unwrap();
                prop_assert!((1.0 / k - c - s2).abs() < 1e-12 * (1.0 + s2 + c));
            }
        }
    }
}
