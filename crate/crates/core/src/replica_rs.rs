//! Replica-symmetric saddle point: order parameters, free energy and performance predictions.

use crate::error::{Error, Result};
use crate::priors_channels::{ChannelModel, Prior};
use crate::rmt_formula::{eval_f, f_functional, gaussian_equivalent_variance, solve_carried_saddle};
use crate::scalar::Real;
use crate::special::q_function;
use crate::spectra::Spectrum;
use serde::{Deserialize, Serialize};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsOptions {
    /// Bound on the stationarity residual of the full objective.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight kept on the previous iterate, in [0, 1).
    pub damping: f64,
    /// Starting overlap as a fraction of T_x (0 is the uninformative start).
    pub init_overlap: f64,
}

impl Default for RsOptions {
    fn default() -> Self {
        RsOptions { tol: 1e-8, max_iter: 500, damping: 0.3, init_overlap: 0.0 }
    }
}

/// Smallest mse the iteration carries, relative to T_x. Near the noiseless limit the true
/// value underflows, and the multiplier Λ_x ~ 1/mse must stay inside its search bracket.
pub const MSE_FLOOR: f64 = 1e-11;

/// Starting overlap of the second run used to look for a coexisting solution.
pub const ALT_INIT_OVERLAP: f64 = 0.99;

/// A stationary point of the replica-symmetric objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSFixedPoint<T = f64> {
    pub q_x: T,
    pub q_u: T,
    pub q_hat_x: T,
    pub q_hat_u: T,
    pub t_x: T,
    pub t_hat_u: T,
    /// Stationary point of the F functional at (T_x − q_x, q_u) selected by the joint
    /// extremization.
    pub lambda_x: T,
    pub lambda_u: T,
    /// Value of the objective; the free energy is its negative.
    pub objective: T,
    /// Largest scaled partial derivative of the objective at the returned point (see the
    /// audit in [`solve_rs`]).
    pub residual: T,
    pub iterations: usize,
}

/// Performance predictions at a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSPrediction<T = f64> {
    /// Conditional entropy of y per output (nats).
    pub free_energy: T,
    /// Mutual information per output (nats).
    pub mutual_info: T,
    /// Bit error rate; binary priors only.
    pub ber: Option<T>,
    pub mse: T,
}

/// Stationary values of the annealed normalization problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnealedSaddle<T = f64> {
    pub t_x: T,
    pub t_hat_x: T,
    pub t_u: T,
    pub t_hat_u: T,
}

struct Problem<'a, T: Real> {
    spec: &'a Spectrum<T>,
    prior: &'a Prior<T>,
    channel: &'a ChannelModel<T>,
    t_x: T,
    t_hat_u: T,
}

/// Quantities derived from one (ξ, Λ_u) state of the iteration.
struct Sweep<T> {
    eta: T,
    lambda_x: T,
    q_hat_x: T,
    q_hat_u: T,
}

impl<T: Real> Problem<'_, T> {
    /// Largest ξ the carried saddle accepts at this Λ_u, shrunk slightly.
    fn cap_xi(&self, xi: T, lambda_u: T) -> T {
        if self.spec.zero_mass() > T::zero() {
            return xi;
        }
        match self.spec.average(|l| T::one() / l) {
            Ok(inv) if inv.is_finite() => xi.min(T::lit(0.999) * lambda_u * inv),
            _ => xi,
        }
    }

    fn sweep(&self, xi: T, lambda_u: T) -> Result<Sweep<T>> {
        let (eta, lambda_x) = solve_carried_saddle(self.spec, xi, lambda_u)?;
        let q_hat_x = (xi.recip() - lambda_x).max(T::zero());
        let q_hat_u = self.t_hat_u + lambda_u - eta.recip();
        Ok(Sweep { eta, lambda_x, q_hat_x, q_hat_u })
    }

    /// One undamped update of (ξ, Λ_u).
    fn update(&self, s: &Sweep<T>) -> Result<(T, T)> {
        let xi = self.prior.scalar_mmse(s.q_hat_x)?.max(T::lit(MSE_FLOOR) * self.t_x);
        // Early iterates can leave the admissible range of a non-Gaussian channel; only the
        // final point is required to lie inside it.
        let q_hat_u = if self.channel.is_gaussian() { s.q_hat_u } else { s.q_hat_u.max(T::zero()).min(self.t_hat_u) };
        let q_u = self.channel.output_terms(q_hat_u, self.t_hat_u)?.q_u;
        let lambda_u = q_u.recip() - (self.t_hat_u - q_hat_u);
        if !(lambda_u > T::zero()) || !(xi > T::zero()) {
            return Err(Error::Numerical(format!("replica update left the domain (ξ={xi}, Λ_u={lambda_u})")));
        }
        Ok((xi, lambda_u))
    }

    /// The full objective with the saddle variables of F kept explicit:
    /// `v = [q_x, q_u, q̂_x, q̂_u, Λ_x, Λ_u]`. Also returns the largest magnitude among its
    /// terms, which sets the rounding floor of any difference quotient.
    fn objective(&self, v: [T; 6]) -> Result<(T, T)> {
        let [q_x, q_u, q_hat_x, q_hat_u, lambda_x, lambda_u] = v;
        let half = T::lit(0.5);
        let beta = self.spec.beta();
        let terms = [
            f_functional(self.spec, self.t_x - q_x, q_u, lambda_x, lambda_u)?,
            half * self.t_hat_u * q_u,
            -beta * half * q_hat_x * q_x,
            beta * self.prior.scalar_free_entropy(q_hat_x)?,
            -half * q_hat_u * q_u,
            self.channel.output_terms(q_hat_u, self.t_hat_u)?.phi,
        ];
        let size = terms.iter().fold(T::zero(), |m, t| m.max(t.abs()));
        Ok((terms.iter().copied().sum(), size))
    }

    /// Richardson-refined central differences of the objective in every variable. Each is
    /// scaled by min(1, |v|) so tiny order parameters are judged relatively, and the whole by
    /// the size of the objective's terms.
    fn audit(&self, v: [T; 6]) -> Result<T> {
        let rel = T::lit(1e-3);
        let q_hat_u = v[3];
        let mut steps = v.map(|x| rel * x.abs());
        // q_x enters F through T_x − q_x, which can be far smaller than q_x itself.
        let xi = self.t_x - v[0];
        steps[0] = rel * v[0].abs().min(xi);
        steps[3] = rel * q_hat_u.abs().max(T::lit(1e-2) * self.t_hat_u);
        let room = match self.channel {
            ChannelModel::Gaussian { sigma2 } => *sigma2 + self.t_hat_u - q_hat_u,
            ChannelModel::Quantized { .. } => q_hat_u.min(self.t_hat_u - q_hat_u),
        };
        steps[3] = steps[3].min(rel * room);
        let size = self.objective(v)?.1.max(T::one());
        let mut worst = T::zero();
        for (i, &h) in steps.iter().enumerate() {
            if !(h > T::zero()) {
                continue;
            }
            let mut at = |d: T| {
                let mut w = v;
                w[i] = w[i] + d;
                self.objective(w).map(|o| o.0)
            };
            let diff = |h: T, at: &mut dyn FnMut(T) -> Result<T>| -> Result<T> { Ok((at(h)? - at(-h)?) / (h + h)) };
            let coarse = diff(h, &mut at)?;
            let fine = diff(h * T::lit(0.5), &mut at)?;
            let d = (T::lit(4.0) * fine - coarse) / T::lit(3.0);
            let scale = match i {
                0 => v[0].abs().min(xi).min(T::one()),
                // q̂_u enters through the room it leaves below T̂_u (plus σ²).
                3 => room.min(T::one()),
                _ => v[i].abs().min(T::one()),
            };
            worst = worst.max(d.abs() * scale / size);
        }
        Ok(worst)
    }
}

/// Solves the replica-symmetric extremization from `opts.init_overlap`.
///
/// Iterates the effective SNR and the channel multiplier until the scalar denoisers and the
/// saddle of F agree, then audits stationarity of the full four-variable objective.
pub fn solve_rs<T: Real>(
    spec: &Spectrum<T>,
    prior: &Prior<T>,
    channel: &ChannelModel<T>,
    opts: &RsOptions,
) -> Result<RSFixedPoint<T>> {
    if !(0.0..1.0).contains(&opts.damping) || !(0.0..1.0).contains(&opts.init_overlap) {
        return Err(Error::Domain("damping and init_overlap must lie in [0, 1)".into()));
    }
    let t_x = prior.second_moment();
    let p = Problem { spec, prior, channel, t_x, t_hat_u: gaussian_equivalent_variance(spec, t_x) };
    let keep = T::lit(opts.damping);
    // Relative step size at which the iteration counts as stalled; bounded below by rounding.
    let step_tol = (opts.tol * 1e-3).min(1e-11).max(1e3 * T::epsilon().as_f64());

    let mut lambda_u = channel.sigma2();
    let mut xi = p.cap_xi(t_x * T::lit(1.0 - opts.init_overlap), lambda_u);
    let mut trajectory = Vec::with_capacity(opts.max_iter);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let s = p.sweep(xi, lambda_u)?;
        let (xi_new, lu_new) = p.update(&s)?;
        let xi_next = p.cap_xi(keep * xi + (T::one() - keep) * xi_new, lu_new);
        let lu_next = keep * lambda_u + (T::one() - keep) * lu_new;
        change = ((xi_next - xi) / xi).abs().max(((lu_next - lambda_u) / lambda_u).abs()).as_f64();
        xi = xi_next;
        lambda_u = lu_next;
        iterations += 1;
        trajectory.push((t_x - xi).as_f64());
        if change < step_tol {
            break;
        }
    }
    if !(change < step_tol) {
        return Err(Error::NoFixedPoint { what: "replica-symmetric iteration".into(), change, trajectory });
    }

    let s = p.sweep(xi, lambda_u)?;
    let (q_x, q_u) = (t_x - xi, s.eta);
    let point = [q_x, q_u, s.q_hat_x, s.q_hat_u, s.lambda_x, lambda_u];
    let objective = p.objective(point)?.0;
    let residual = p.audit(point)?;
    if !(residual.as_f64() < opts.tol) {
        return Err(Error::Convergence { what: "stationarity audit of the replica objective".into(), residual: residual.as_f64() });
    }
    Ok(RSFixedPoint {
        q_x,
        q_u,
        q_hat_x: s.q_hat_x,
        q_hat_u: s.q_hat_u,
        t_x,
        t_hat_u: p.t_hat_u,
        lambda_x: s.lambda_x,
        lambda_u,
        objective,
        residual,
        iterations,
    })
}

/// Runs from the uninformative start and from a near-perfect overlap, returning every
/// distinct solution found (the uninformative branch first).
pub fn solve_rs_branches<T: Real>(
    spec: &Spectrum<T>,
    prior: &Prior<T>,
    channel: &ChannelModel<T>,
    opts: &RsOptions,
) -> Result<Vec<RSFixedPoint<T>>> {
    let first = solve_rs(spec, prior, channel, &RsOptions { init_overlap: 0.0, ..*opts })?;
    let mut out = vec![first];
    if let Ok(second) = solve_rs(spec, prior, channel, &RsOptions { init_overlap: ALT_INIT_OVERLAP, ..*opts }) {
        if (second.q_x - first.q_x).abs().as_f64() > opts.tol.max(1e-6) * first.t_x.as_f64() {
            out.push(second);
        }
    }
    Ok(out)
}

/// BER of the scalar equivalent channel, Q(√q̂_x).
pub fn ber<T: Real>(fp: &RSFixedPoint<T>, prior: &Prior<T>) -> Result<T> {
    match prior {
        Prior::Binary => Ok(q_function(fp.q_hat_x.max(T::zero()).sqrt())),
        _ => Err(Error::Unsupported("BER is defined for binary priors only".into())),
    }
}

/// Free energy, mutual information, BER and MSE at a fixed point.
pub fn predict<T: Real>(
    fp: &RSFixedPoint<T>,
    _spec: &Spectrum<T>,
    prior: &Prior<T>,
    channel: &ChannelModel<T>,
) -> Result<RSPrediction<T>> {
    let free_energy = -fp.objective;
    let mutual_info = free_energy + channel.output_entropy_term(fp.t_hat_u)?;
    let ber = match prior {
        Prior::Binary => Some(ber(fp, prior)?),
        _ => None,
    };
    let mse = (fp.t_x - fp.q_x).max(T::zero());
    Ok(RSPrediction { free_energy, mutual_info, ber, mse })
}

/// Neville extrapolation to zero of values sampled at `hs`.
fn extrapolate_to_zero(hs: &[f64], vals: &[f64]) -> f64 {
    let mut p = vals.to_vec();
    let n = hs.len();
    for m in 1..n {
        for i in 0..n - m {
            p[i] = (hs[i + m] * p[i] - hs[i] * p[i + 1]) / (hs[i + m] - hs[i]);
        }
    }
    p[0]
}

fn central<T: Real>(mut f: impl FnMut(T) -> Result<T>, x: T, h: T) -> Result<T> {
    let d = |h: T, f: &mut dyn FnMut(T) -> Result<T>| -> Result<T> { Ok((f(x + h)? - f(x - h)?) / (h + h)) };
    let coarse = d(h, &mut f)?;
    let fine = d(h * T::lit(0.5), &mut f)?;
    Ok((T::lit(4.0) * fine - coarse) / T::lit(3.0))
}

/// Solves the annealed normalization problem numerically and checks it against
/// (T_x, 0, 0, β⟨λ⟩T_x).
pub fn verify_annealed<T: Real>(
    spec: &Spectrum<T>,
    prior: &Prior<T>,
    channel: &ChannelModel<T>,
) -> Result<AnnealedSaddle<T>> {
    let beta = spec.beta();
    let two = T::lit(2.0);
    // T_x from the stationarity of the prior term at T̂_x = 0.
    let t_x = -two * central(|c| Ok(prior.log_partition(T::zero(), c)), T::zero(), T::lit(1e-3))?;

    // F vanishes on the η = 0 boundary; its η-slope and the ξ-slope there are extrapolated
    // from a geometric ladder of small η.
    let etas: Vec<f64> = (0..5).map(|k| 1e-2 / f64::powi(2.0, k)).collect();
    let mut slope_eta = Vec::new();
    let mut slope_xi = Vec::new();
    for &e in &etas {
        let eta = T::lit(e);
        slope_eta.push((eval_f(spec, t_x, eta)?.value / eta).as_f64());
        let dxi = central(|xi| Ok(eval_f(spec, xi, eta)?.value), t_x, T::lit(1e-3) * t_x)?;
        slope_xi.push(dxi.as_f64());
    }
    let t_hat_u = T::lit(-2.0 * extrapolate_to_zero(&etas, &slope_eta));
    let t_hat_x = T::lit(-2.0 * extrapolate_to_zero(&etas, &slope_xi)) / beta;

    // T_u from the stationarity of the output normalization at T̂_u.
    let log_norm = |t: T| -> Result<T> {
        let s = t.max(T::zero()).sqrt();
        let mut err = None;
        let mass = crate::quad::normal_expect(1e-12, 1.0, |z: T| match channel.likelihood_mass(s * z) {
            Ok(m) => m,
            Err(e) => {
                err.get_or_insert(e);
                T::one()
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(mass.ln()),
        }
    };
    let h = T::lit(1e-3) * t_hat_u.max(T::lit(1e-2));
    let t_u = -two * central(log_norm, t_hat_u.max(h + h), h)?;

    let found = AnnealedSaddle { t_x, t_hat_x, t_u, t_hat_u };
    let expected = [prior.second_moment(), T::zero(), T::zero(), gaussian_equivalent_variance(spec, prior.second_moment())];
    let got = [t_x, t_hat_x, t_u, t_hat_u];
    let names = ["T_x", "T̂_x", "T_u", "T̂_u"];
    for k in 0..4 {
        let tol = 1e-8 * expected[k].as_f64().abs().max(1.0);
        if (got[k] - expected[k]).abs().as_f64() > tol {
            return Err(Error::Consistency(format!(
                "annealed saddle {}: solved {} but expected {}",
                names[k], got[k], expected[k]
            )));
        }
    }
    Ok(found)
}
