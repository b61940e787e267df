//! Message-passing decoder driven by the spectral saddle conditions, and its closed-form
//! WBES/Gaussian-channel specialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::priors_channels::{ChannelModel, Prior};
use crate::rmt_formula::{solve_carried_saddle, solve_vstep_saddle};
use crate::spectra::Spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// χ_x = T_x, χ̂_x = 0, m_x = prior means, h_u = Hm_x, m_u = 0.
    PaperFig1,
    /// m_x = tanh(Hᵀy/σ²); binary prior and Gaussian channel only.
    MatchedFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Self-reaction cancellation. Off forces χ̂_u = χ̂_x = 0 in the updates.
    pub src: bool,
    /// Weight of the previous m_x in each V-step (0 = undamped).
    pub damping: f64,
    pub init_mode: InitMode,
    pub record_trajectory: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-8, src: true, damping: 0.0, init_mode: InitMode::PaperFig1, record_trajectory: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub m_x: DVector<f64>,
    pub m_u: DVector<f64>,
    pub h_x: DVector<f64>,
    pub h_u: DVector<f64>,
    pub chi_x: f64,
    pub chi_u: f64,
    pub lambda_x: f64,
    pub lambda_u: f64,
    pub chi_hat_x: f64,
    pub chi_hat_u: f64,
    pub t: usize,
}

/// One trajectory row; `ber` is NaN when no ground truth was supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub ber: f64,
    pub chi_x: f64,
    pub chi_u: f64,
    pub lambda_x: f64,
    pub chi_hat_x: f64,
    pub chi_hat_u: f64,
    pub max_delta: f64,
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub m_x: DVector<f64>,
    /// ±1 decisions with sign(0) = +1.
    pub bits: DVector<f64>,
    /// Components with m_x exactly 0.
    pub ties: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Set when χ_x left (0, T_x], a value went non-finite, or a step failed.
    pub diverged: Option<String>,
    pub trajectory: Vec<TrajectoryRow>,
    /// State after the last completed step.
    pub chi_x: f64,
    pub chi_hat_x: f64,
    pub chi_hat_u: f64,
}

/// Hard decisions sign(m) with sign(0) := +1, and the number of ties.
pub fn hard_decisions(m: &DVector<f64>) -> (DVector<f64>, usize) {
    let ties = m.iter().filter(|&&v| v == 0.0).count();
    (m.map(|v| if v < 0.0 { -1.0 } else { 1.0 }), ties)
}

/// Fraction of positions where `bits` and `truth` differ.
pub fn bit_error_rate(bits: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    bits.iter().zip(truth.iter()).filter(|(b, x)| b != x).count() as f64 / bits.len() as f64
}

fn check_dims(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if h.nrows() != y.len() || h.ncols() == 0 || h.nrows() == 0 {
        return domain(format!("H is {}×{} but y has length {}", h.nrows(), h.ncols(), y.len()));
    }
    Ok(())
}

fn matched_filter(h: &DMatrix<f64>, y: &DVector<f64>, sigma2: f64) -> DVector<f64> {
    (h.tr_mul(y) / sigma2).map(f64::tanh)
}

pub fn init(h: &DMatrix<f64>, y: &DVector<f64>, prior: &Prior, channel: &ChannelModel, mode: InitMode) -> Result<DecoderState> {
    check_dims(h, y)?;
    let (n, k) = h.shape();
    let t_x = prior.second_moment();
    let (m_x, chi_x) = match mode {
        InitMode::PaperFig1 => (DVector::zeros(k), t_x),
        InitMode::MatchedFilter => {
            if !channel.is_gaussian() || *prior != Prior::Binary {
                return Err(Error::Unsupported("matched-filter init needs a binary prior and a Gaussian channel".into()));
            }
            let m = matched_filter(h, y, channel.sigma2());
            let chi = 1.0 - m.norm_squared() / k as f64;
            (m, chi)
        }
    };
    Ok(DecoderState {
        h_u: h * &m_x,
        m_x,
        m_u: DVector::zeros(n),
        h_x: DVector::zeros(k),
        chi_x,
        chi_u: f64::NAN,
        lambda_x: 1.0 / chi_x,
        // The multiplier carried into the first H-step.
        lambda_u: channel.sigma2(),
        chi_hat_x: 0.0,
        chi_hat_u: 0.0,
        t: 0,
    })
}

/// H-step. The saddle is solved for (χ_u, Λ_x) at the current (χ_x, Λ_u), so that Λ_u stays at
/// σ² for Gaussian channels. With `src` off no saddle is solved.
pub fn h_step(
    state: &mut DecoderState,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &Spectrum,
    channel: &ChannelModel,
    src: bool,
) -> Result<()> {
    state.chi_hat_u = if src {
        let (chi_u, lambda_x) = solve_carried_saddle(spec, state.chi_x, state.lambda_u)?;
        state.lambda_x = lambda_x;
        1.0 / chi_u - state.lambda_u
    } else {
        0.0
    };
    let ch = state.chi_hat_u;
    state.h_u.axpy(-ch, &state.m_u, 1.0);
    let mut curv = 0.0;
    for mu in 0..y.len() {
        let (m, c) = channel.denoise(y[mu], state.h_u[mu], ch)?;
        state.m_u[mu] = m;
        curv += c;
    }
    state.h_x = h.tr_mul(&state.m_u);
    state.chi_u = curv / y.len() as f64;
    if !(state.chi_u > 0.0) {
        return Err(Error::Numerical(format!("nonpositive chi_u = {:e} after the H-step", state.chi_u)));
    }
    state.lambda_u = 1.0 / state.chi_u - ch;
    Ok(())
}

/// V-step. Returns max |Δm_x|.
pub fn v_step(state: &mut DecoderState, h: &DMatrix<f64>, spec: &Spectrum, prior: &Prior, src: bool, damping: f64) -> Result<f64> {
    state.chi_hat_x = if src {
        let (chi_x, lambda_x) = solve_vstep_saddle(spec, state.chi_u, state.lambda_u)?;
        state.lambda_x = lambda_x;
        1.0 / chi_x - lambda_x
    } else {
        0.0
    };
    let cx = state.chi_hat_x;
    state.h_x.axpy(cx, &state.m_x, 1.0);
    let mut var = 0.0;
    let mut delta = 0.0f64;
    for k in 0..state.m_x.len() {
        let (m, v) = prior.denoise(state.h_x[k], cx);
        let m = (1.0 - damping) * m + damping * state.m_x[k];
        delta = delta.max((m - state.m_x[k]).abs());
        state.m_x[k] = m;
        var += v;
    }
    state.h_u = h * &state.m_x;
    state.chi_x = var / state.m_x.len() as f64;
    state.lambda_x = 1.0 / state.chi_x - cx;
    state.t += 1;
    Ok(delta)
}

fn row(t: usize, m_x: &DVector<f64>, truth: Option<&DVector<f64>>, s: [f64; 5], max_delta: f64) -> TrajectoryRow {
    let ber = truth.map_or(f64::NAN, |x| bit_error_rate(&hard_decisions(m_x).0, x));
    TrajectoryRow { t, ber, chi_x: s[0], chi_u: s[1], lambda_x: s[2], chi_hat_x: s[3], chi_hat_u: s[4], max_delta }
}

fn check_options(opts: &DecodeOptions) -> Result<()> {
    if !(0.0..1.0).contains(&opts.damping) || !(opts.tol > 0.0) {
        return domain(format!("need damping in [0, 1) and tol > 0, got {} and {}", opts.damping, opts.tol));
    }
    Ok(())
}

fn diverged(chi_x: f64, t_x: f64, m_x: &DVector<f64>) -> Option<String> {
    if !(chi_x > 0.0 && chi_x <= t_x * (1.0 + 1e-12)) {
        Some(format!("chi_x = {chi_x:e} left (0, {t_x}]"))
    } else if m_x.iter().any(|v| !v.is_finite()) {
        Some("non-finite m_x".into())
    } else {
        None
    }
}

/// Alternates H- and V-steps until max |Δm_x| < tol or `max_iter` iterations.
///
/// A failing step or χ_x leaving (0, T_x] ends the run with `diverged` set; the partial
/// trajectory is kept. `truth` only feeds the BER column of the trajectory.
pub fn decode(
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &Spectrum,
    prior: &Prior,
    channel: &ChannelModel,
    opts: &DecodeOptions,
    truth: Option<&DVector<f64>>,
) -> Result<DecodeResult> {
    check_options(opts)?;
    let mut st = init(h, y, prior, channel, opts.init_mode)?;
    let t_x = prior.second_moment();
    let mut traj = Vec::new();
    if opts.record_trajectory {
        traj.push(row(0, &st.m_x, truth, [st.chi_x, st.chi_u, st.lambda_x, st.chi_hat_x, st.chi_hat_u], f64::NAN));
    }
    let (mut converged, mut failure) = (false, None);
    for _ in 0..opts.max_iter {
        let step = h_step(&mut st, h, y, spec, channel, opts.src)
            .and_then(|_| v_step(&mut st, h, spec, prior, opts.src, opts.damping));
        let delta = match step {
            Ok(d) => d,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        if opts.record_trajectory {
            traj.push(row(st.t, &st.m_x, truth, [st.chi_x, st.chi_u, st.lambda_x, st.chi_hat_x, st.chi_hat_u], delta));
        }
        failure = diverged(st.chi_x, t_x, &st.m_x);
        if failure.is_some() {
            break;
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let (bits, ties) = hard_decisions(&st.m_x);
    Ok(DecodeResult {
        bits,
        ties,
        iterations: st.t,
        converged,
        diverged: failure,
        trajectory: traj,
        chi_x: st.chi_x,
        chi_hat_x: st.chi_hat_x,
        chi_hat_u: st.chi_hat_u,
        m_x: st.m_x,
    })
}

/// Positive root Λ of χ = (1 − 1/β)/Λ + (σ²/β)/(σ²Λ + β), i.e. of χσ²Λ² + (χβ − σ²)Λ − (β − 1) = 0.
pub fn wbes_lambda_x(chi_x: f64, beta: f64, sigma2: f64) -> f64 {
    let b = chi_x * beta - sigma2;
    let disc = (b * b + 4.0 * chi_x * sigma2 * (beta - 1.0)).sqrt();
    if b >= 0.0 {
        2.0 * (beta - 1.0) / (b + disc)
    } else {
        (disc - b) / (2.0 * chi_x * sigma2)
    }
}

/// Closed-form decoder for binary inputs, a Gaussian channel and WBES matrices:
/// m_u ← (y − Hm_x + χ̂_u m_u)/(σ² + χ̂_u), m_x ← tanh(Hᵀm_u + χ̂_x m_x), with χ̂_u = β/Λ_x and
/// χ̂_x = 1/χ_x − Λ_x from the current χ_x = 1 − |m_x|²/K.
pub fn decode_wbes_gaussian(
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    sigma2: f64,
    opts: &DecodeOptions,
    truth: Option<&DVector<f64>>,
) -> Result<DecodeResult> {
    check_options(opts)?;
    check_dims(h, y)?;
    if !(beta > 1.0) || !(sigma2 > 0.0) {
        return domain(format!("need beta > 1 and sigma2 > 0, got {beta} and {sigma2}"));
    }
    let (n, k) = h.shape();
    let mut m_x = match opts.init_mode {
        InitMode::PaperFig1 => DVector::zeros(k),
        InitMode::MatchedFilter => matched_filter(h, y, sigma2),
    };
    let mut m_u = DVector::<f64>::zeros(n);
    let mut chi_x = 1.0 - m_x.norm_squared() / k as f64;
    let mut traj = Vec::new();
    if opts.record_trajectory {
        traj.push(row(0, &m_x, truth, [chi_x, f64::NAN, 1.0 / chi_x, 0.0, 0.0], f64::NAN));
    }
    let (mut t, mut converged, mut failure) = (0, false, None);
    let (mut chx, mut chu) = (0.0, 0.0);
    while t < opts.max_iter {
        let lx = wbes_lambda_x(chi_x, beta, sigma2);
        let (chi_hat_u, chi_hat_x) = if opts.src { (beta / lx, 1.0 / chi_x - lx) } else { (0.0, 0.0) };
        let r = y - h * &m_x + &m_u * chi_hat_u;
        m_u = r / (sigma2 + chi_hat_u);
        let field = h.tr_mul(&m_u) + &m_x * chi_hat_x;
        let mut delta = 0.0f64;
        for (m, f) in m_x.iter_mut().zip(field.iter()) {
            let new = (1.0 - opts.damping) * f.tanh() + opts.damping * *m;
            delta = delta.max((new - *m).abs());
            *m = new;
        }
        t += 1;
        (chx, chu) = (chi_hat_x, chi_hat_u);
        chi_x = 1.0 - m_x.norm_squared() / k as f64;
        if opts.record_trajectory {
            let chi_u = 1.0 / (sigma2 + chi_hat_u);
            traj.push(row(t, &m_x, truth, [chi_x, chi_u, 1.0 / chi_x - chi_hat_x, chi_hat_x, chi_hat_u], delta));
        }
        failure = diverged(chi_x, 1.0, &m_x);
        if failure.is_some() {
            break;
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let (bits, ties) = hard_decisions(&m_x);
    Ok(DecodeResult {
        bits,
        ties,
        iterations: t,
        converged,
        diverged: failure,
        trajectory: traj,
        chi_x,
        chi_hat_x: chx,
        chi_hat_u: chu,
        m_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{make_instance, Ensemble};
    use crate::spectra::make_wbes;

    fn gauss(s2: f64) -> ChannelModel {
        ChannelModel::gaussian(s2).unwrap()
    }

    #[test]
    fn init_modes() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 0.5);
        let st = init(&h, &y, &Prior::Binary, &gauss(0.25), InitMode::PaperFig1).unwrap();
        assert_eq!((st.chi_x, st.lambda_x, st.chi_hat_x), (1.0, 1.0, 0.0));
        assert!(st.m_x.iter().chain(st.h_u.iter()).chain(st.m_u.iter()).all(|&v| v == 0.0));
        let st = init(&h, &y, &Prior::Binary, &gauss(0.25), InitMode::MatchedFilter).unwrap();
        assert!((st.m_x[0] - 0.964027580075817).abs() < 1e-15);
        let q = ChannelModel::quantized(0.25, vec![0.0]).unwrap();
        assert!(matches!(init(&h, &y, &Prior::Binary, &q, InitMode::MatchedFilter), Err(Error::Unsupported(_))));
        let st = init(&h, &y, &Prior::gaussian(2.0).unwrap(), &gauss(0.25), InitMode::PaperFig1).unwrap();
        assert_eq!(st.chi_x, 2.0);
    }

    #[test]
    fn first_h_step_from_zero_messages() {
        let inst = make_instance(&Ensemble::Wbes, 20, 24, &Prior::Binary, &gauss(0.3), 1, 0).unwrap();
        let spec = make_wbes(1.2).unwrap();
        let mut st = init(&inst.h, &inst.y, &Prior::Binary, &gauss(0.3), InitMode::MatchedFilter).unwrap();
        let hm = &inst.h * &st.m_x;
        h_step(&mut st, &inst.h, &inst.y, &spec, &gauss(0.3), true).unwrap();
        let want = (&inst.y - hm) / (0.3 + st.chi_hat_u);
        assert!((&st.m_u - want).amax() < 1e-14);
        assert!((st.lambda_u - 0.3).abs() < 1e-15);
        assert!((st.chi_hat_u - 1.2 / st.lambda_x).abs() < 1e-12);
    }

    #[test]
    fn v_step_binary_is_tanh_and_idempotent_at_init() {
        let inst = make_instance(&Ensemble::Wbes, 20, 24, &Prior::Binary, &gauss(0.3), 2, 0).unwrap();
        let spec = make_wbes(1.2).unwrap();
        let mut st = init(&inst.h, &inst.y, &Prior::Binary, &gauss(0.3), InitMode::PaperFig1).unwrap();
        h_step(&mut st, &inst.h, &inst.y, &spec, &gauss(0.3), true).unwrap();
        let (hx, mx) = (st.h_x.clone(), st.m_x.clone());
        v_step(&mut st, &inst.h, &spec, &Prior::Binary, true, 0.0).unwrap();
        let want = (hx + mx * st.chi_hat_x).map(f64::tanh);
        assert!((&st.m_x - want).amax() < 1e-15);
        assert!((st.chi_x - (1.0 - st.m_x.norm_squared() / 24.0)).abs() < 1e-12);

        // Zero messages and χ̂_x = 0 leave m_x at the prior mean.
        let mut st = init(&inst.h, &inst.y, &Prior::Binary, &gauss(0.3), InitMode::PaperFig1).unwrap();
        st.chi_u = 0.2;
        st.lambda_u = 0.3;
        v_step(&mut st, &inst.h, &spec, &Prior::Binary, false, 0.0).unwrap();
        assert!(st.m_x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_quadratic_residual() {
        for &(chi, b, s2) in &[(1.0, 1.1, 0.125), (0.3, 1.5, 1.0), (1e-6, 2.0, 1e-3), (0.9, 1.05, 10.0)] {
            let l = wbes_lambda_x(chi, b, s2);
            let r = (1.0 - 1.0 / b) / l + (s2 / b) / (s2 * l + b) - chi;
            assert!(l > 0.0 && r.abs() < 1e-12 * chi.max(1e-3), "{chi} {b} {s2}: {r}");
        }
    }

    #[test]
    fn no_information_limit() {
        let inst = make_instance(&Ensemble::Wbes, 40, 44, &Prior::Binary, &gauss(1e6), 3, 0).unwrap();
        let r = decode(&inst.h, &inst.y, &make_wbes(1.1).unwrap(), &Prior::Binary, &gauss(1e6), &DecodeOptions::default(), None).unwrap();
        assert!(r.converged && r.iterations <= 3);
        assert!(r.m_x.amax() < 1e-2);
    }

    #[test]
    fn hard_decision_ties() {
        let (b, ties) = hard_decisions(&DVector::from_vec(vec![0.0, -0.1, 0.2, -0.0]));
        assert_eq!(b.as_slice(), &[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(ties, 2);
        assert_eq!(bit_error_rate(&b, &DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0])), 0.25);
    }

    #[test]
    fn bad_options() {
        let h = DMatrix::from_element(2, 3, 1.0);
        let y = DVector::zeros(2);
        let o = DecodeOptions { damping: 1.0, ..Default::default() };
        assert!(decode_wbes_gaussian(&h, &y, 1.5, 0.1, &o, None).is_err());
        assert!(decode_wbes_gaussian(&h, &DVector::zeros(3), 1.5, 0.1, &DecodeOptions::default(), None).is_err());
    }
}
