//! Random channel matrices and channel instances.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::priors_channels::{ChannelModel, Prior};
use crate::spectra::{make_empirical, make_marchenko_pastur, make_wbes, Spectrum};

/// How H is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ensemble {
    /// All nonzero squared singular values equal to β, so HHᵀ = βI.
    Wbes,
    /// IID Gaussian(0, 1/N) entries.
    Basic,
    /// H = U D Vᵀ with Haar U, V and squared singular values at the quantiles of `spectrum`.
    Custom { spectrum: crate::spectra::SpectrumDoc },
}

/// Tag recorded on an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleTag {
    Wbes,
    Basic,
    CustomSpectrum,
}

impl Ensemble {
    pub fn tag(&self) -> EnsembleTag {
        match self {
            Ensemble::Wbes => EnsembleTag::Wbes,
            Ensemble::Basic => EnsembleTag::Basic,
            Ensemble::Custom { .. } => EnsembleTag::CustomSpectrum,
        }
    }

    /// Asymptotic spectrum of HᵀH at load β.
    pub fn spectrum(&self, beta: f64) -> Result<Spectrum> {
        match self {
            Ensemble::Wbes => make_wbes(beta),
            Ensemble::Basic => make_marchenko_pastur(beta),
            Ensemble::Custom { spectrum } => Spectrum::from_doc(spectrum),
        }
    }
}

/// One realization of the linear channel y ~ P(y | Hx).
#[derive(Clone, Debug)]
pub struct ChannelInstance {
    /// N×K.
    pub h: DMatrix<f64>,
    pub x_true: DVector<f64>,
    pub y: DVector<f64>,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub tag: EnsembleTag,
}

impl ChannelInstance {
    pub fn beta(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

/// N = round(K/β) and the realized β = K/N.
pub fn dims_for_beta(beta: f64, k: usize) -> Result<(usize, f64)> {
    if !(beta > 0.0 && beta.is_finite()) || k == 0 {
        return domain(format!("need beta > 0 and K >= 1, got beta = {beta}, K = {k}"));
    }
    let n = ((k as f64 / beta).round() as usize).max(1);
    Ok((n, k as f64 / n as f64))
}

/// Independent stream for one trial: stream `trial` of the generator seeded by `master_seed`.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill keeps the draw order independent of nalgebra internals.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// n×r matrix with orthonormal columns, uniform on the Stiefel manifold (r ≤ n).
///
/// QR of an IID Gaussian matrix with each column multiplied by the sign of the matching
/// diagonal entry of R; without that correction the law is not Haar.
pub fn sample_haar_columns<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || r == 0 || r > n {
        return domain(format!("need 1 <= r <= n, got n = {n}, r = {r}"));
    }
    let qr = gaussian_matrix(n, r, rng).qr();
    let (mut q, rr) = (qr.q(), qr.r());
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Haar-distributed n×n orthogonal matrix.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    sample_haar_columns(n, n, rng)
}

/// Smallest x with cdf(x) ≥ p.
fn quantile(spec: &Spectrum, p: f64, top: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, top);
    if spec.cdf(0.0) >= p {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spec.cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Deterministic squared singular values for a custom spectrum: the K mid-quantiles of ρ,
/// keeping the largest min(N, K).
fn custom_eigenvalues(spec: &Spectrum, n: usize, k: usize) -> Vec<f64> {
    let top = spec
        .atoms()
        .iter()
        .map(|a| a.1)
        .chain(spec.continuous().map(|c| c.hi))
        .fold(0.0f64, f64::max)
        * (1.0 + 1e-12)
        + 1e-300;
    let r = n.min(k);
    (k - r..k).map(|j| quantile(spec, (j as f64 + 0.5) / k as f64, top)).collect()
}

/// Samples the N×K channel matrix.
pub fn build_matrix<R: Rng + ?Sized>(ensemble: &Ensemble, n: usize, k: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || k == 0 {
        return domain(format!("need N, K >= 1, got N = {n}, K = {k}"));
    }
    let lambdas = match ensemble {
        Ensemble::Basic => {
            let s = 1.0 / (n as f64).sqrt();
            return Ok(gaussian_matrix(n, k, rng) * s);
        }
        Ensemble::Wbes => {
            if k <= n {
                return domain(format!("WBES needs K > N, got N = {n}, K = {k}"));
            }
            vec![k as f64 / n as f64; n]
        }
        Ensemble::Custom { spectrum } => custom_eigenvalues(&Spectrum::from_doc(spectrum)?, n, k),
    };
    let r = lambdas.len();
    let u = sample_haar_columns(n, r, rng)?;
    let v = sample_haar_columns(k, r, rng)?;
    let mut ud = u;
    for (j, l) in lambdas.iter().enumerate() {
        ud.column_mut(j).scale_mut(l.sqrt());
    }
    Ok(ud * v.transpose())
}

/// Draws x ~ prior and y ~ channel(Hx) for a given matrix.
pub fn instance_from_matrix<R: Rng + ?Sized>(
    h: DMatrix<f64>,
    prior: &Prior,
    channel: &ChannelModel,
    tag: EnsembleTag,
    seed: u64,
    rng: &mut R,
) -> Result<ChannelInstance> {
    prior.validate()?;
    channel.validate()?;
    let (n, k) = h.shape();
    let x = DVector::from_vec(prior.sample(k, rng));
    let delta = &h * &x;
    let y = DVector::from_vec(channel.sample(delta.as_slice(), rng));
    Ok(ChannelInstance { h, x_true: x, y, n, k, seed, tag })
}

/// Full instance for trial `trial` of `master_seed`. H, x and y are drawn in that order from
/// the trial's stream.
pub fn make_instance(
    ensemble: &Ensemble,
    n: usize,
    k: usize,
    prior: &Prior,
    channel: &ChannelModel,
    master_seed: u64,
    trial: u64,
) -> Result<ChannelInstance> {
    let mut rng = trial_rng(master_seed, trial);
    let h = build_matrix(ensemble, n, k, &mut rng)?;
    instance_from_matrix(h, prior, channel, ensemble.tag(), master_seed, &mut rng)
}

/// Eigenvalues of HᵀH, computed from the smaller Gram matrix and padded with zeros to K.
pub fn gram_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let (n, k) = h.shape();
    let gram = if n < k { h * h.transpose() } else { h.transpose() * h };
    let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    eig.resize(k, 0.0);
    eig.sort_by(f64::total_cmp);
    eig
}

/// Empirical spectrum of HᵀH as a `Spectrum` at the realized β.
pub fn empirical_spectrum(h: &DMatrix<f64>) -> Result<Spectrum> {
    let (n, k) = h.shape();
    make_empirical(&gram_eigenvalues(h), k, k as f64 / n as f64)
}

/// Kolmogorov–Smirnov distance between a sample and a CDF. Atoms in the CDF are handled by
/// taking its left limit at each distinct sample value.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        // Ties: step once over the whole run.
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let x = xs[i];
        let left = cdf(x - 1e-9 * x.abs().max(1.0));
        d = d.max((left - i as f64 / n).abs()).max(((j + 1) as f64 / n - cdf(x)).abs());
        i = j + 1;
    }
    d
}

const MAGIC: &[u8; 4] = b"SPCH";
const DUMP_VERSION: u32 = 1;

/// Writes the binary dump: "SPCH", version (u32), N, K, seed (u64), then H row-major, x_true
/// and y as little-endian f64.
pub fn write_instance(inst: &ChannelInstance, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 8 * (inst.n * inst.k + inst.n + inst.k));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    for v in [inst.n as u64, inst.k as u64, inst.seed] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..inst.n {
        for j in 0..inst.k {
            buf.extend_from_slice(&inst.h[(i, j)].to_le_bytes());
        }
    }
    for v in inst.x_true.iter().chain(inst.y.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a dump written by [`write_instance`]. The ensemble is not stored, so the tag comes
/// back as `CustomSpectrum`.
pub fn read_instance(path: &Path) -> Result<ChannelInstance> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::Config(format!("{}: {m}", path.display()));
    if buf.len() < 32 || &buf[..4] != MAGIC {
        return Err(bad("not an SPCH dump"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let (n, k, seed) = (u64_at(8) as usize, u64_at(16) as usize, u64_at(24));
    let count = n.checked_mul(k).and_then(|nk| nk.checked_add(n + k)).ok_or_else(|| bad("size overflow"))?;
    if buf.len() != 32 + 8 * count {
        return Err(bad("length does not match header"));
    }
    let vals: Vec<f64> = buf[32..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let h = DMatrix::from_row_slice(n, k, &vals[..n * k]);
    let x_true = DVector::from_column_slice(&vals[n * k..n * k + k]);
    let y = DVector::from_column_slice(&vals[n * k + k..]);
    Ok(ChannelInstance { h, x_true, y, n, k, seed, tag: EnsembleTag::CustomSpectrum })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = trial_rng(1, 0);
        for n in [1, 2, 17, 200] {
            let q = sample_haar_orthogonal(n, &mut rng).unwrap();
            let e = max_abs(&(q.transpose() * &q - DMatrix::identity(n, n)));
            assert!(e < 1e-12 * n as f64, "n = {n}: {e}");
        }
        assert!(sample_haar_columns(3, 4, &mut rng).is_err());
    }

    #[test]
    fn haar_one_by_one_is_a_fair_sign() {
        let mut rng = trial_rng(2, 0);
        let plus = (0..4000).filter(|_| sample_haar_orthogonal(1, &mut rng).unwrap()[(0, 0)] == 1.0).count();
        // ±1 each with probability ½; 4 standard deviations is ±126.
        assert!((plus as i64 - 2000).abs() < 126, "{plus}");
    }

    #[test]
    fn haar_trace_moments_are_rotation_invariant() {
        // E tr Q = 0 and E tr(Q²) = 1 for Haar O(n); RQ has the same law for a fixed R.
        let mut rng = trial_rng(3, 0);
        let n = 8;
        let r = sample_haar_orthogonal(n, &mut rng).unwrap();
        let (mut t1, mut t2, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0);
        let m = 4000;
        for _ in 0..m {
            let q = sample_haar_orthogonal(n, &mut rng).unwrap();
            let rq = &r * &q;
            t1 += q.trace();
            t2 += (&q * &q).trace();
            r1 += rq.trace();
            r2 += (&rq * &rq).trace();
        }
        let m = m as f64;
        for (v, want) in [(t1 / m, 0.0), (t2 / m, 1.0), (r1 / m, 0.0), (r2 / m, 1.0)] {
            assert!((v - want).abs() < 0.1, "{v} vs {want}");
        }
    }

    #[test]
    fn wbes_gram_is_scaled_identity() {
        let mut rng = trial_rng(4, 0);
        let h = build_matrix(&Ensemble::Wbes, 500, 550, &mut rng).unwrap();
        let e = max_abs(&(&h * h.transpose() - DMatrix::identity(500, 500) * 1.1));
        assert!(e < 1e-10, "{e}");
        assert!(((h.transpose() * &h).trace() / 550.0 - 1.0).abs() < 1e-12);
        assert!(build_matrix(&Ensemble::Wbes, 5, 5, &mut rng).is_err());
    }

    #[test]
    fn wbes_empirical_spectrum_has_exact_atoms() {
        let mut rng = trial_rng(5, 0);
        let h = build_matrix(&Ensemble::Wbes, 40, 60, &mut rng).unwrap();
        let eig = gram_eigenvalues(&h);
        assert!(eig[..20].iter().all(|l| l.abs() < 1e-10));
        assert!(eig[20..].iter().all(|l| (l - 1.5).abs() < 1e-10));
        let s = empirical_spectrum(&h).unwrap();
        assert!((s.beta() - 1.5).abs() < 1e-15 && (s.mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn custom_spectrum_uses_quantiles() {
        let doc = Spectrum::from_parts(1.0, vec![(0.5, 1.0), (0.5, 3.0)], None).unwrap().to_doc();
        let mut rng = trial_rng(6, 0);
        let h = build_matrix(&Ensemble::Custom { spectrum: doc }, 30, 30, &mut rng).unwrap();
        let eig = gram_eigenvalues(&h);
        assert!(eig[..15].iter().all(|l| (l - 1.0).abs() < 1e-10));
        assert!(eig[15..].iter().all(|l| (l - 3.0).abs() < 1e-10));
    }

    #[test]
    fn identity_channel_without_noise_returns_the_input() {
        let mut rng = trial_rng(7, 0);
        let inst = instance_from_matrix(
            DMatrix::identity(6, 6),
            &Prior::Binary,
            &ChannelModel::gaussian(1e-300).unwrap(),
            EnsembleTag::CustomSpectrum,
            7,
            &mut rng,
        )
        .unwrap();
        assert!((&inst.y - &inst.x_true).amax() < 1e-140);
    }

    #[test]
    fn instances_are_reproducible() {
        let ch = ChannelModel::gaussian(0.1).unwrap();
        let a = make_instance(&Ensemble::Wbes, 20, 22, &Prior::Binary, &ch, 99, 3).unwrap();
        let b = make_instance(&Ensemble::Wbes, 20, 22, &Prior::Binary, &ch, 99, 3).unwrap();
        let c = make_instance(&Ensemble::Wbes, 20, 22, &Prior::Binary, &ch, 99, 4).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.y, b.y);
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn dims_round_and_report_realized_beta() {
        assert_eq!(dims_for_beta(1.1, 2048).unwrap().0, 1862);
        assert!((dims_for_beta(1.1, 2048).unwrap().1 - 1.09989).abs() < 1e-5);
        assert_eq!(dims_for_beta(1.1, 550).unwrap(), (500, 1.1));
        assert!(dims_for_beta(0.0, 10).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let ch = ChannelModel::gaussian(0.3).unwrap();
        let inst = make_instance(&Ensemble::Basic, 7, 9, &Prior::Binary, &ch, 5, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("inst.spch");
        write_instance(&inst, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * (63 + 16));
        assert_eq!(&bytes[..4], b"SPCH");
        // Row-major: the second stored float is H[0, 1].
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), inst.h[(0, 1)]);
        let back = read_instance(&p).unwrap();
        assert_eq!((back.h, back.x_true, back.y, back.seed), (inst.h, inst.x_true, inst.y, 5));
        std::fs::write(&p, &bytes[..40]).unwrap();
        assert!(read_instance(&p).is_err());
    }

    #[test]
    fn ks_distance_basics() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance(&xs, |x| x.clamp(0.0, 1.0)) - 0.005).abs() < 1e-12);
        assert!((ks_distance(&[1.0, 1.0], |x| if x < 1.0 { 0.0 } else { 1.0 })).abs() < 1e-15);
    }
}
