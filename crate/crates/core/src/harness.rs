//! Experiment configuration, orchestration and CSV/JSON output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{bit_error_rate, decode, DecodeOptions, DecodeResult, InitMode, TrajectoryRow};
use crate::ensemble::{
    build_matrix, dims_for_beta, empirical_spectrum, gram_eigenvalues, ks_distance, make_instance, trial_rng, write_instance,
    Ensemble,
};
use crate::error::{Error, Result};
use crate::priors_channels::{ChannelModel, Prior};
use crate::replica_rs::{ber, predict, solve_rs_branches, RSFixedPoint, RSPrediction, RsOptions};
use crate::rmt_formula::eval_f;
use crate::special::q_function;
use crate::spectra::{make_marchenko_pastur, make_wbes, Spectrum};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ReplicaSweep,
    DecodeSweep,
    Trajectory,
    Fcheck,
    SpectrumReport,
    /// One instance, one SNR: per-iteration trace of a single decoder run.
    Decode,
}

/// Output noise model; σ² comes from the SNR grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian,
    Quantized { thresholds: Vec<f64> },
}

impl NoiseSpec {
    pub fn channel(&self, sigma2: f64) -> Result<ChannelModel> {
        match self {
            NoiseSpec::Gaussian => ChannelModel::gaussian(sigma2),
            NoiseSpec::Quantized { thresholds } => ChannelModel::quantized(sigma2, thresholds.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub ensembles: Vec<Ensemble>,
    /// Requested loads; N = round(K/β) and the realized β is reported.
    pub betas: Vec<f64>,
    pub k: usize,
    pub prior: Prior,
    pub noise: NoiseSpec,
    /// SNR = −10 log₁₀(2σ²).
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub decoder: DecodeOptions,
    pub replica: RsOptions,
    pub out_dir: PathBuf,
    /// Also write the instance of a `decode` run as an SPCH dump.
    pub dump_instance: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk_sweep()
    }
}

impl ExperimentConfig {
    /// BER against SNR for WBES and BASIC at β = 1.1, desk scale.
    pub fn desk_sweep() -> Self {
        Self {
            experiment: ExperimentKind::DecodeSweep,
            ensembles: vec![Ensemble::Wbes, Ensemble::Basic],
            betas: vec![1.1],
            k: 550,
            prior: Prior::Binary,
            noise: NoiseSpec::Gaussian,
            snr_grid_db: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            trials: 200,
            master_seed: 2008,
            // The undamped iteration oscillates at low SNR for K in the hundreds.
            decoder: DecodeOptions { damping: 0.3, ..Default::default() },
            replica: RsOptions::default(),
            out_dir: PathBuf::from("out"),
            dump_instance: false,
        }
    }

    /// Decoder trajectories with and without self-reaction cancellation, WBES at β = 1.5 and 1.6.
    pub fn src_ablation() -> Self {
        Self {
            experiment: ExperimentKind::Trajectory,
            ensembles: vec![Ensemble::Wbes],
            betas: vec![1.5, 1.6],
            k: 512,
            snr_grid_db: vec![6.0],
            trials: 100,
            decoder: DecodeOptions { init_mode: InitMode::MatchedFilter, ..Default::default() },
            ..Self::desk_sweep()
        }
    }

    /// Paper-scale sizes: K = 2048 and 500 trials for decode sweeps.
    pub fn full_scale(mut self) -> Self {
        if self.experiment == ExperimentKind::DecodeSweep {
            self.k = 2048;
            self.trials = 500;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.k == 0 || self.ensembles.is_empty() || self.betas.is_empty() {
            return bad("need K >= 1 and at least one ensemble and beta".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("non-finite SNR {s}"));
        }
        if self.snr_grid_db.is_empty() {
            return bad("empty SNR grid".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("invalid beta {b}"));
        }
        self.prior.validate()?;
        self.noise.channel(1.0)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0) / 2.0
}

/// BER of the scalar Gaussian channel with binary inputs, Q(1/σ).
pub fn scalar_baseline_ber(sigma2: f64) -> f64 {
    q_function(1.0 / sigma2.sqrt())
}

/// Worker pool bounded by `SPECCHAN_THREADS` (default: available parallelism).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var("SPECCHAN_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Config(format!("SPECCHAN_THREADS = {v:?}")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))
}

fn ensemble_name(e: &Ensemble) -> &'static str {
    match e {
        Ensemble::Wbes => "wbes",
        Ensemble::Basic => "basic",
        Ensemble::Custom { .. } => "custom",
    }
}

/// Mean and standard error (sample std / √n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Fixed point with the least free energy among the branches found.
pub fn stable_branch(branches: &[(RSFixedPoint, RSPrediction)]) -> usize {
    (0..branches.len()).min_by(|&a, &b| branches[a].1.free_energy.total_cmp(&branches[b].1.free_energy)).unwrap_or(0)
}

fn replica_branches(
    spec: &Spectrum,
    prior: &Prior,
    channel: &ChannelModel,
    opts: &RsOptions,
) -> Result<Vec<(RSFixedPoint, RSPrediction)>> {
    solve_rs_branches(spec, prior, channel, opts)?
        .into_iter()
        .map(|fp| {
            let p = predict(&fp, spec, prior, channel)?;
            Ok((fp, p))
        })
        .collect()
}

// ---------------------------------------------------------------------------------------------
// Replica sweep

#[derive(Clone, Debug, Serialize)]
pub struct ReplicaRow {
    pub ensemble: &'static str,
    pub beta: f64,
    pub snr_db: f64,
    pub sigma2: f64,
    pub q_x: f64,
    pub q_hat_x: f64,
    pub free_energy: f64,
    pub mutual_info: f64,
    pub ber: f64,
    pub mse: f64,
    pub residual: f64,
    pub branch_id: usize,
    /// Least free energy among the branches at this point.
    pub stable: bool,
}

pub fn run_replica_sweep(cfg: &ExperimentConfig) -> Result<Vec<ReplicaRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for ens in &cfg.ensembles {
        for &beta in &cfg.betas {
            let spec = ens.spectrum(beta)?;
            for &snr in &cfg.snr_grid_db {
                let s2 = sigma2_from_snr_db(snr);
                let branches = replica_branches(&spec, &cfg.prior, &cfg.noise.channel(s2)?, &cfg.replica)?;
                let best = stable_branch(&branches);
                for (i, (fp, p)) in branches.iter().enumerate() {
                    rows.push(ReplicaRow {
                        ensemble: ensemble_name(ens),
                        beta,
                        snr_db: snr,
                        sigma2: s2,
                        q_x: fp.q_x,
                        q_hat_x: fp.q_hat_x,
                        free_energy: p.free_energy,
                        mutual_info: p.mutual_info,
                        ber: p.ber.unwrap_or(f64::NAN),
                        mse: p.mse,
                        residual: fp.residual,
                        branch_id: i,
                        stable: i == best,
                    });
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------------------------
// Decode sweep

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub ensemble: &'static str,
    pub beta: f64,
    pub beta_requested: f64,
    pub k: usize,
    pub n: usize,
    pub snr_db: f64,
    pub sigma2: f64,
    pub trials: usize,
    pub ber_mean: f64,
    pub ber_stderr: f64,
    pub replica_ber: f64,
    pub scalar_ber: f64,
    pub diverged_count: usize,
    pub nonconverged_count: usize,
    pub mean_iterations: f64,
    pub seed: u64,
}

struct TrialOutcome {
    ber: f64,
    diverged: bool,
    converged: bool,
    iterations: usize,
}

/// Spectrum handed to the decoder: exact atoms for WBES, the empirical law otherwise.
fn decoder_spectrum(ens: &Ensemble, h: &nalgebra::DMatrix<f64>) -> Result<Spectrum> {
    match ens {
        Ensemble::Wbes => {
            let (n, k) = h.shape();
            make_wbes(k as f64 / n as f64)
        }
        _ => empirical_spectrum(h),
    }
}

/// Trial `t`: H and x from stream t, then the same noise draws rescaled at every SNR.
fn sweep_trial(cfg: &ExperimentConfig, ens: &Ensemble, n: usize, t: u64) -> Result<Vec<TrialOutcome>> {
    let mut rng = trial_rng(cfg.master_seed, t);
    let h = build_matrix(ens, n, cfg.k, &mut rng)?;
    let x = nalgebra::DVector::from_vec(cfg.prior.sample(cfg.k, &mut rng));
    let spec = decoder_spectrum(ens, &h)?;
    let delta = &h * &x;
    let mut out = Vec::with_capacity(cfg.snr_grid_db.len());
    for &snr in &cfg.snr_grid_db {
        let ch = cfg.noise.channel(sigma2_from_snr_db(snr))?;
        let mut noise_rng = rng.clone();
        let y = nalgebra::DVector::from_vec(ch.sample(delta.as_slice(), &mut noise_rng));
        let r = decode(&h, &y, &spec, &cfg.prior, &ch, &cfg.decoder, None)?;
        out.push(TrialOutcome {
            ber: bit_error_rate(&r.bits, &x),
            diverged: r.diverged.is_some(),
            converged: r.converged,
            iterations: r.iterations,
        });
    }
    Ok(out)
}

pub fn run_decode_sweep(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for ens in &cfg.ensembles {
        for &beta_req in &cfg.betas {
            let (n, beta) = dims_for_beta(beta_req, cfg.k)?;
            let spec = ens.spectrum(beta)?;
            let outcomes: Vec<Vec<TrialOutcome>> =
                pool.install(|| (0..cfg.trials as u64).into_par_iter().map(|t| sweep_trial(cfg, ens, n, t)).collect::<Result<_>>())?;
            for (i, &snr) in cfg.snr_grid_db.iter().enumerate() {
                let s2 = sigma2_from_snr_db(snr);
                let bers: Vec<f64> = outcomes.iter().map(|o| o[i].ber).collect();
                let (ber_mean, ber_stderr) = mean_stderr(&bers);
                let replica_ber = match replica_branches(&spec, &cfg.prior, &cfg.noise.channel(s2)?, &cfg.replica) {
                    Ok(b) if cfg.prior == Prior::Binary => ber(&b[stable_branch(&b)].0, &cfg.prior)?,
                    Ok(_) => f64::NAN,
                    Err(e) => return Err(e),
                };
                rows.push(SweepRow {
                    ensemble: ensemble_name(ens),
                    beta,
                    beta_requested: beta_req,
                    k: cfg.k,
                    n,
                    snr_db: snr,
                    sigma2: s2,
                    trials: cfg.trials,
                    ber_mean,
                    ber_stderr,
                    replica_ber,
                    scalar_ber: scalar_baseline_ber(s2),
                    diverged_count: outcomes.iter().filter(|o| o[i].diverged).count(),
                    nonconverged_count: outcomes.iter().filter(|o| !o[i].converged).count(),
                    mean_iterations: outcomes.iter().map(|o| o[i].iterations as f64).sum::<f64>() / cfg.trials as f64,
                    seed: cfg.master_seed,
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------------------------
// Trajectories

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryMeanRow {
    pub beta: f64,
    pub variant: &'static str,
    pub t: usize,
    pub ber_mean: f64,
    pub ber_stderr: f64,
    pub chi_x_mean: f64,
    /// Runs still iterating at t; finished runs contribute their last state.
    pub active: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySummary {
    pub beta: f64,
    pub variant: &'static str,
    pub final_ber_mean: f64,
    pub final_ber_stderr: f64,
    /// First iteration from which the mean BER stays within 5% of its final value.
    pub plateau_iteration: usize,
    pub diverged_count: usize,
}

pub struct TrajectoryOutput {
    pub rows: Vec<TrajectoryMeanRow>,
    pub summary: Vec<TrajectorySummary>,
}

fn padded(traj: &[TrajectoryRow], len: usize) -> Vec<TrajectoryRow> {
    let mut v = traj.to_vec();
    let last = *v.last().expect("trajectory has the initial row");
    while v.len() < len {
        v.push(TrajectoryRow { t: v.len(), ..last });
    }
    v
}

pub fn run_trajectory(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<TrajectoryOutput> {
    cfg.validate()?;
    let snr = cfg.snr_grid_db[0];
    let s2 = sigma2_from_snr_db(snr);
    let ch = cfg.noise.channel(s2)?;
    let ens = &cfg.ensembles[0];
    let len = cfg.decoder.max_iter + 1;
    let (mut rows, mut summary) = (Vec::new(), Vec::new());
    for &beta_req in &cfg.betas {
        let (n, beta) = dims_for_beta(beta_req, cfg.k)?;
        for (variant, src) in [("src", true), ("no_src", false)] {
            let opts = DecodeOptions { src, record_trajectory: true, ..cfg.decoder.clone() };
            let runs: Vec<DecodeResult> = pool.install(|| {
                (0..cfg.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let inst = make_instance(ens, n, cfg.k, &cfg.prior, &ch, cfg.master_seed, t)?;
                        let spec = decoder_spectrum(ens, &inst.h)?;
                        decode(&inst.h, &inst.y, &spec, &cfg.prior, &ch, &opts, Some(&inst.x_true))
                    })
                    .collect::<Result<_>>()
            })?;
            let trajs: Vec<Vec<TrajectoryRow>> = runs.iter().map(|r| padded(&r.trajectory, len)).collect();
            let mut means = Vec::with_capacity(len);
            for t in 0..len {
                let bers: Vec<f64> = trajs.iter().map(|tr| tr[t].ber).collect();
                let (m, se) = mean_stderr(&bers);
                let chi = trajs.iter().map(|tr| tr[t].chi_x).sum::<f64>() / trajs.len() as f64;
                let active = runs.iter().filter(|r| r.iterations >= t).count();
                means.push(m);
                rows.push(TrajectoryMeanRow { beta, variant, t, ber_mean: m, ber_stderr: se, chi_x_mean: chi, active });
            }
            let finals: Vec<f64> = trajs.iter().map(|tr| tr[len - 1].ber).collect();
            let (fm, fse) = mean_stderr(&finals);
            let plateau_iteration =
                (0..len).find(|&t| means[t..].iter().all(|&m| (m - fm).abs() <= 0.05 * fm)).unwrap_or(len - 1);
            summary.push(TrajectorySummary {
                beta,
                variant,
                final_ber_mean: fm,
                final_ber_stderr: fse,
                plateau_iteration,
                diverged_count: runs.iter().filter(|r| r.diverged.is_some()).count(),
            });
        }
    }
    Ok(TrajectoryOutput { rows, summary })
}

// ---------------------------------------------------------------------------------------------
// Single decode

pub struct SingleDecode {
    pub result: DecodeResult,
    pub ber: f64,
    pub n: usize,
    pub beta: f64,
    pub instance: crate::ensemble::ChannelInstance,
}

/// Decodes trial 0 of the first ensemble, β and SNR of the config, recording the trajectory.
pub fn run_single_decode(cfg: &ExperimentConfig) -> Result<SingleDecode> {
    cfg.validate()?;
    let (n, beta) = dims_for_beta(cfg.betas[0], cfg.k)?;
    let ch = cfg.noise.channel(sigma2_from_snr_db(cfg.snr_grid_db[0]))?;
    let ens = &cfg.ensembles[0];
    let inst = make_instance(ens, n, cfg.k, &cfg.prior, &ch, cfg.master_seed, 0)?;
    let spec = decoder_spectrum(ens, &inst.h)?;
    let opts = DecodeOptions { record_trajectory: true, ..cfg.decoder.clone() };
    let result = decode(&inst.h, &inst.y, &spec, &cfg.prior, &ch, &opts, Some(&inst.x_true))?;
    let ber = bit_error_rate(&result.bits, &inst.x_true);
    Ok(SingleDecode { result, ber, n, beta, instance: inst })
}

// ---------------------------------------------------------------------------------------------
// F checks

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

fn check(rows: &mut Vec<CheckRow>, name: String, value: f64, bound: f64) {
    rows.push(CheckRow { check: name, pass: value < bound, value, bound });
}

/// Monte-Carlo estimate of (1/N) ln E cos(√β a·b) for a WBES pair, with its standard error.
///
/// By rotation invariance a is uniform on the sphere of radius √(Nη) in R^N and b holds the
/// first N coordinates of a uniform vector of radius √(Kξ) in R^K.
pub fn wbes_monte_carlo_f<R: Rng + ?Sized>(n: usize, k: usize, xi: f64, eta: f64, samples: usize, rng: &mut R) -> (f64, f64) {
    let beta = k as f64 / n as f64;
    let sphere = |dim: usize, radius: f64, rng: &mut R| -> Vec<f64> {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = radius / g.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.into_iter().map(|v| v * s).collect()
    };
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let a = sphere(n, (n as f64 * eta).sqrt(), rng);
            let b = sphere(k, (k as f64 * xi).sqrt(), rng);
            (beta.sqrt() * a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()).cos()
        })
        .collect();
    let (m, se) = mean_stderr(&vals);
    (m.ln() / n as f64, se / m / n as f64)
}

pub fn run_fcheck(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    for &b in &[0.5, 1.1, 2.0] {
        let s = make_marchenko_pastur(b)?;
        let mut worst = 0.0f64;
        for &xi in &grid {
            for &eta in &grid {
                worst = worst.max((eval_f(&s, xi, eta)?.value + 0.5 * b * xi * eta).abs());
            }
        }
        check(&mut rows, format!("mp_identity beta={b}"), worst, 1e-6);
    }
    let specs = [("wbes 1.1", make_wbes(1.1)?), ("wbes 2", make_wbes(2.0)?), ("mp 0.5", make_marchenko_pastur(0.5)?), ("mp 2", make_marchenko_pastur(2.0)?)];
    for (name, s) in &specs {
        let mut worst = 0.0f64;
        for &v in &[0.1, 0.5, 1.0] {
            worst = worst.max(eval_f::<f64>(s, v, 1e-8)?.value.abs()).max(eval_f::<f64>(s, 1e-8, v)?.value.abs());
        }
        check(&mut rows, format!("boundary {name}"), worst, 1e-4);
        // F + (β/2)⟨λ⟩ξη = o(ξη): the ratio shrinks with the coupling.
        let ratio = |e: f64| -> Result<f64> {
            let v = 10f64.powi(-(e as i32));
            Ok(((eval_f(s, v, v)?.value + 0.5 * s.beta() * s.mean() * v * v) / (v * v)).abs())
        };
        let (r2, r4) = (ratio(2.0)?, ratio(4.0)?);
        check(&mut rows, format!("small_coupling {name} (relative excess at 1e-4)"), r4, (0.1 * r2).max(1e-6));
        // Envelope: ∂F/∂ξ = βΛ_ξ/2 − β/(2ξ).
        let (xi, eta, h) = (0.4, 0.3, 1e-5);
        let r = eval_f(s, xi, eta)?;
        let d = (eval_f(s, xi + h, eta)?.value - eval_f(s, xi - h, eta)?.value) / (2.0 * h);
        let lx = r.saddle.ok_or_else(|| Error::Numerical("interior F without saddle".into()))?.lambda_xi;
        let want = 0.5 * s.beta() * lx - 0.5 * s.beta() / xi;
        check(&mut rows, format!("envelope_xi {name}"), (d - want).abs(), 1e-6);
    }
    let mut rng = trial_rng(cfg.master_seed, 0);
    let (xi, eta) = (0.1, 0.02);
    let (mc, se) = wbes_monte_carlo_f(500, 550, xi, eta, 10_000, &mut rng);
    let f = eval_f(&make_wbes(1.1)?, xi, eta)?.value;
    check(&mut rows, format!("wbes_monte_carlo N=500 xi={xi} eta={eta} (|F - MC| / 3 se)"), (f - mc).abs() / (3.0 * se), 1.0);
    Ok(rows)
}

// ---------------------------------------------------------------------------------------------
// Spectrum report

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub ensemble: &'static str,
    pub beta: f64,
    pub k: usize,
    pub n: usize,
    pub trial: usize,
    pub ks: f64,
    pub mean_eigenvalue: f64,
    /// max |HHᵀ − βI| for WBES, NaN otherwise.
    pub gram_deviation: f64,
}

pub fn run_spectrum_report(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<Vec<SpectrumRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for ens in &cfg.ensembles {
        for &beta_req in &cfg.betas {
            let (n, beta) = dims_for_beta(beta_req, cfg.k)?;
            let spec = ens.spectrum(beta)?;
            let part: Vec<SpectrumRow> = pool.install(|| {
                (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = trial_rng(cfg.master_seed, t as u64);
                        let h = build_matrix(ens, n, cfg.k, &mut rng)?;
                        let eig = gram_eigenvalues(&h);
                        let gram_deviation = if *ens == Ensemble::Wbes {
                            (&h * h.transpose() - nalgebra::DMatrix::<f64>::identity(n, n) * beta).amax()
                        } else {
                            f64::NAN
                        };
                        Ok(SpectrumRow {
                            ensemble: ensemble_name(ens),
                            beta,
                            k: cfg.k,
                            n,
                            trial: t,
                            ks: ks_distance(&eig, |x| spec.cdf(x)),
                            mean_eigenvalue: eig.iter().sum::<f64>() / cfg.k as f64,
                            gram_deviation,
                        })
                    })
                    .collect::<Result<_>>()
            })?;
            rows.extend(part);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------------------------
// Output

/// Serializes rows of a flat struct to CSV (header from the field names, floats in shortest
/// round-trip form).
pub fn to_csv<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let v = serde_json::to_value(r)?;
        let obj = v.as_object().ok_or_else(|| Error::Config("CSV rows must be structs".into()))?;
        if i == 0 {
            out.push_str(&obj.keys().cloned().collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        let cells: Vec<String> = obj.values().map(csv_cell).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn csv_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => "NaN".into(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes `<stem>.csv` and its `<stem>.json` sidecar into `dir`.
pub fn write_outputs<S: Serialize>(dir: &Path, stem: &str, rows: &[S], cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, to_csv(rows)?)?;
    let realized: Vec<serde_json::Value> = cfg
        .betas
        .iter()
        .filter_map(|&b| dims_for_beta(b, cfg.k).ok().map(|(n, rb)| serde_json::json!({"beta_requested": b, "beta_realized": rb, "k": cfg.k, "n": n})))
        .collect();
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let sidecar = serde_json::json!({
        "artifact": "specchan",
        "version": VERSION,
        "csv": format!("{stem}.csv"),
        "rows": rows.len(),
        "master_seed": cfg.master_seed,
        "realized_beta": realized,
        "config": cfg,
        "extra": extra,
        "timestamp_unix": stamp,
    });
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(csv_path)
}

/// Human-readable one-line-per-row rendering of fcheck results.
pub fn format_checks(rows: &[CheckRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(s, "{} {:<70} {:.3e} < {:.1e}", if r.pass { "ok  " } else { "FAIL" }, r.check, r.value, r.bound);
    }
    s
}

/// Writes the SPCH dump of a single-decode instance.
pub fn dump_instance(dir: &Path, run: &SingleDecode) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join("instance.spch");
    write_instance(&run.instance, &p)?;
    Ok(p)
}
