use nalgebra::DMatrix;
use specchan::ensemble::*;
use specchan::priors_channels::{ChannelModel, Prior};
use specchan::rmt_formula::gaussian_equivalent_variance;
use specchan::spectra::{make_marchenko_pastur, make_wbes};
use statrs::distribution::{Beta, ContinuousCDF};

/// Asymptotic Kolmogorov p-value for √n·D.
fn kolmogorov_p(n: usize, d: f64) -> f64 {
    let l = (n as f64).sqrt() * d;
    let p: f64 = (1..200).map(|j| {
        let j = j as f64;
        2.0 * if j as i64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * j * j * l * l).exp()
    }).sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn haar_column_coordinate_follows_the_sphere_marginal() {
    // A coordinate x of a uniform unit vector in R^n has x² ~ Beta(1/2, (n − 1)/2).
    let n = 50;
    let b = Beta::new(0.5, (n as f64 - 1.0) / 2.0).unwrap();
    let mut rng = trial_rng(11, 0);
    let xs: Vec<f64> = (0..2000).map(|_| sample_haar_orthogonal(n, &mut rng).unwrap()[(0, 0)]).collect();
    let d = ks_distance(&xs, |x| 0.5 + 0.5 * x.signum() * b.cdf(x * x));
    let p = kolmogorov_p(xs.len(), d);
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
}

#[test]
fn basic_spectrum_matches_marchenko_pastur() {
    let mut rng = trial_rng(12, 0);
    let h = build_matrix(&Ensemble::Basic, 1000, 1100, &mut rng).unwrap();
    let mp = make_marchenko_pastur(1.1).unwrap();
    let d = ks_distance(&gram_eigenvalues(&h), |x| mp.cdf(x));
    assert!(d < 0.05, "KS {d}");
    // The same statistic is large against the wrong law.
    let w = make_wbes(1.1).unwrap();
    assert!(ks_distance(&gram_eigenvalues(&h), |x| w.cdf(x)) > 0.3);
}

#[test]
fn wbes_criterion_scale_gram() {
    let mut rng = trial_rng(13, 0);
    let h = build_matrix(&Ensemble::Wbes, 500, 550, &mut rng).unwrap();
    let e = (&h * h.transpose() - DMatrix::identity(500, 500) * 1.1).amax();
    assert!(e < 1e-10, "{e}");
}

#[test]
fn output_energy_matches_the_gaussian_equivalent_variance() {
    let ch = ChannelModel::gaussian(1.0).unwrap();
    let spec = make_wbes(1.1).unwrap();
    let want = gaussian_equivalent_variance(&spec, 1.0);
    for ens in [Ensemble::Wbes, Ensemble::Basic] {
        let mut acc = 0.0;
        let trials = 100;
        for t in 0..trials {
            let inst = make_instance(&ens, 500, 550, &Prior::Binary, &ch, 21, t).unwrap();
            acc += (&inst.h * &inst.x_true).norm_squared() / 500.0;
        }
        let got = acc / trials as f64;
        assert!((got / want - 1.0).abs() < 0.02, "{ens:?}: {got} vs {want}");
    }
}

#[test]
fn noise_level_of_instances() {
    let ch = ChannelModel::gaussian(0.25).unwrap();
    let inst = make_instance(&Ensemble::Wbes, 400, 480, &Prior::Binary, &ch, 1, 0).unwrap();
    let r = &inst.y - &inst.h * &inst.x_true;
    let v = r.norm_squared() / 400.0;
    assert!((v - 0.25).abs() < 0.25 * 4.0 * (2.0f64 / 400.0).sqrt(), "{v}");
    assert!(inst.x_true.iter().all(|x| x.abs() == 1.0));
}
