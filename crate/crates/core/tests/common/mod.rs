//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0) / 2.0
}

/// Simpson's rule on [a, b] with `n` (even) intervals.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + h * i as f64);
    }
    acc * h / 3.0
}

pub fn gauss(n: f64) -> f64 {
    (-0.5 * n * n).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Brute-force stationary point of the binary/WBES/Gaussian-channel replica objective.
///
/// η is eliminated in closed form (the Gaussian output term forces Λ_η = σ²), Λ_ξ solves the
/// WBES quadratic, the scalar term is a Simpson integral, and its q̂ derivative is taken under
/// the integral sign. The outer search zooms a grid of q_x around the interior extremum.
pub struct GridOracle {
    pub beta: f64,
    pub s2: f64,
}

impl GridOracle {
    pub fn phi_x(&self, q: f64) -> f64 {
        let s = q.sqrt();
        simpson(-10.0, 10.0, 8000, |n| {
            let u = q + s * n;
            (u.abs() + (-2.0 * u.abs()).exp().ln_1p() - std::f64::consts::LN_2) * gauss(n)
        }) - 0.5 * q
    }

    pub fn dphi_x(&self, q: f64) -> f64 {
        let s = q.sqrt();
        simpson(-10.0, 10.0, 8000, |n| (q + s * n).tanh() * (1.0 + n / (2.0 * s)) * gauss(n)) - 0.5
    }

    /// q̂ with φ'(q̂) = q_x/2, by bisection.
    pub fn q_hat(&self, q_x: f64) -> f64 {
        let (mut lo, mut hi) = (1e-8f64, 200.0f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if self.dphi_x(mid) < 0.5 * q_x {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-13 {
                break;
            }
        }
        (lo * hi).sqrt()
    }

    pub fn lambda_xi(&self, xi: f64) -> f64 {
        let (b, s2) = (self.beta, self.s2);
        let lin = b * xi - s2;
        (-lin + (lin * lin + 4.0 * xi * s2 * (b - 1.0)).sqrt()) / (2.0 * xi * s2)
    }

    pub fn objective(&self, q_x: f64) -> f64 {
        let (b, s2) = (self.beta, self.s2);
        let xi = 1.0 - q_x;
        let a = self.lambda_xi(xi);
        let f_part = -0.5 * (a * s2 + b).ln() - 0.5 * (b - 1.0) * a.ln() + 0.5 * b * a * xi - 0.5 * b * xi.ln() - 0.5 * b
            - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let qh = self.q_hat(q_x);
        f_part + b * (-0.5 * qh * q_x + self.phi_x(qh))
    }

    pub fn solve(&self, mut lo: f64, mut hi: f64) -> (f64, f64) {
        let pts = 21;
        while hi - lo > 1e-5 {
            let xs: Vec<f64> = (0..pts).map(|i| lo + (hi - lo) * i as f64 / (pts - 1) as f64).collect();
            let gs: Vec<f64> = xs.iter().map(|&x| self.objective(x)).collect();
            let k = (1..pts - 1)
                .find(|&i| (gs[i] - gs[i - 1]) * (gs[i + 1] - gs[i]) <= 0.0)
                .expect("interior extremum inside the search window");
            lo = xs[k - 1];
            hi = xs[k + 1];
        }
        // Values are flat at the extremum; finish on the envelope derivative, q̂ = 1/ξ − Λ_ξ.
        let slope = |q: f64| 1.0 / (1.0 - q) - self.lambda_xi(1.0 - q) - self.q_hat(q);
        let pad = hi - lo;
        let (mut lo, mut hi) = (lo - pad, hi + pad);
        let s_lo = slope(lo);
        assert!(s_lo * slope(hi) < 0.0, "envelope derivative does not change sign");
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (slope(mid) > 0.0) == (s_lo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q_x = 0.5 * (lo + hi);
        (q_x, self.q_hat(q_x))
    }

    /// Brackets the extremum on a 1e-4 grid over [0.95, 1) and refines it.
    pub fn locate(&self) -> (f64, f64) {
        let coarse: Vec<f64> = (0..500).map(|i| 0.95 + 1e-4 * i as f64).collect();
        let vals: Vec<f64> = coarse.iter().map(|&q| self.objective(q)).collect();
        let k = (1..vals.len() - 1).find(|&i| (vals[i] - vals[i - 1]) * (vals[i + 1] - vals[i]) <= 0.0).expect("extremum in [0.95, 1)");
        self.solve(coarse[k - 1], coarse[k + 1])
    }
}

/// Error rate of z = √q̂·x₀ + n with x₀ = ±1 equiprobable, from `draws` samples.
pub fn scalar_channel_error_rate(q_hat: f64, draws: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = q_hat.sqrt();
    let mut errors = 0u64;
    for _ in 0..draws {
        let x0 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let n: f64 = StandardNormal.sample(&mut rng);
        if (s * x0 + n) * x0 < 0.0 {
            errors += 1;
        }
    }
    errors as f64 / draws as f64
}
