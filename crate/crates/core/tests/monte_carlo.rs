//! Simulation-side checks of the analytic machinery.

use nalgebra::DVector;

use sofi_rgl::blinking::EmitterModel;
use sofi_rgl::fisher::{gaussian_fi, si_fisher_exact};
use sofi_rgl::mc::{
    compare_summaries, cumulant_image_check, cumulant_image_expected, empirical_summary, score_fi_oracle,
    simulate_frames, simulate_replicas,
};
use sofi_rgl::model::DetectorGeometry;
use sofi_rgl::summary::{summary, SchemeSpec};

fn grid() -> DetectorGeometry {
    DetectorGeometry::standard(0.5, 1.0).unwrap()
}

#[test]
fn constant_brightness_is_poissonian() {
    let model = EmitterModel::simplified(0.0, 0.5, 200.0).unwrap();
    let batch = simulate_frames(&model, &grid(), 0.4, 1_000_000, 101).unwrap();
    let k1 = cumulant_image_check(&batch, 1).unwrap();
    let k2 = cumulant_image_check(&batch, 2).unwrap();
    for (j, (&mean, &var)) in k1.iter().zip(&k2).enumerate() {
        if mean > 1.0 {
            let ratio = var / mean;
            assert!((0.99..=1.01).contains(&ratio), "pixel {j}: {ratio}");
        }
    }
}

#[test]
fn lag_covariance_decays_at_relaxation_rate() {
    let (tau_on, tau_off, tau) = (1.0, 1.0, 0.5);
    let model = EmitterModel::markov(1.0, tau_on, tau_off, 400.0).unwrap();
    let g = grid().with_frame_time(tau).unwrap();
    let batch = simulate_frames(&model, &g, 0.3, 1_000_000, 7).unwrap();
    let totals: Vec<f64> = (0..batch.n_frames)
        .map(|m| batch.frame(m).iter().map(|&c| c as f64).sum())
        .collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let lag_cov = |d: usize| {
        let n = totals.len() - d;
        (0..n).map(|m| (totals[m] - mean) * (totals[m + d] - mean)).sum::<f64>() / n as f64
    };
    let lags = [1usize, 2, 3];
    let logs: Vec<f64> = lags.iter().map(|&d| lag_cov(d).ln()).collect();
    let xs: Vec<f64> = lags.iter().map(|&d| d as f64).collect();
    let xbar = xs.iter().sum::<f64>() / 3.0;
    let ybar = logs.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&logs).map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>()
        / xs.iter().map(|x| (x - xbar).powi(2)).sum::<f64>();
    let expected = -(1.0 / tau_on + 1.0 / tau_off) * tau;
    assert!((slope / expected - 1.0).abs() < 0.05, "slope {slope} vs {expected}");
}

#[test]
fn empirical_means_match_analytic_for_both_models() {
    let g = grid();
    for model in [
        EmitterModel::simplified(0.8, 0.3, 60.0).unwrap(),
        EmitterModel::markov(0.8, 0.7, 1.4, 60.0).unwrap(),
    ] {
        let batch = simulate_frames(&model, &g, 0.6, 200_000, 3).unwrap();
        for scheme in [SchemeSpec::MAck(2), SchemeSpec::MXc2s] {
            let analytic = summary(scheme, &g, &model, 0.6).unwrap();
            let empirical = empirical_summary(&batch, scheme).unwrap();
            let report = compare_summaries(&analytic, &empirical, 0.05);
            assert!(report.max_z() < 5.0, "{scheme}: {report:?}");
            assert!(report.above_3 as f64 <= 0.01 * report.entries as f64 + 1.0, "{scheme}: {report:?}");
        }
    }
}

#[test]
fn sample_mean_centring_is_a_higher_order_effect() {
    let g = grid();
    let model = EmitterModel::simplified(0.9, 0.5, 100.0).unwrap();
    let frames = 1_000_000;
    let m = frames as f64;
    let batch = simulate_frames(&model, &g, 0.2, frames, 19).unwrap();
    let means = batch.pixel_means();
    let mu = cumulant_image_expected(&model, &g, 0.2, 1).unwrap();
    let k2 = cumulant_image_expected(&model, &g, 0.2, 2).unwrap();
    let k4 = cumulant_image_expected(&model, &g, 0.2, 4).unwrap();
    for j in 0..g.n_pixels {
        if mu[j] < 0.05 {
            continue;
        }
        let z = (means[j] - mu[j]) / (k2[j] / m).sqrt();
        assert!(z.abs() < 5.0, "pixel {j}: mean z {z}");
        // Centring by the sample mean instead of μ lowers the AC2 estimate by
        // exactly (N̄ − μ)², against a statistical error of order 1/√M.
        let shift = (means[j] - mu[j]).powi(2);
        let ac2_stderr = ((k4[j] + 2.0 * k2[j] * k2[j]) / m).sqrt();
        assert!(shift < 3.0 * ac2_stderr, "pixel {j}: shift {shift} vs stderr {ac2_stderr}");
    }
}

#[test]
fn cumulant_images_match_analytic_values() {
    let g = grid();
    let model = EmitterModel::simplified(0.7, 0.5, 80.0).unwrap();
    let frames = 400_000;
    let batch = simulate_frames(&model, &g, 0.5, frames, 23).unwrap();
    let expected: Vec<Vec<f64>> = (1..=4)
        .map(|k| cumulant_image_expected(&model, &g, 0.5, k).unwrap())
        .collect();
    let k1 = cumulant_image_check(&batch, 1).unwrap();
    let k2 = cumulant_image_check(&batch, 2).unwrap();
    for j in 0..g.n_pixels {
        let (c2, c4) = (expected[1][j], expected[3][j]);
        if expected[0][j] < 0.05 {
            continue;
        }
        let z1 = (k1[j] - expected[0][j]) / (c2 / frames as f64).sqrt();
        let z2 = (k2[j] - c2) / ((c4 + 2.0 * c2 * c2) / frames as f64).sqrt();
        assert!(z1.abs() < 5.0 && z2.abs() < 5.0, "pixel {j}: z1 {z1}, z2 {z2}");
    }
}

#[test]
fn no_fluctuations_leave_only_shot_noise_in_second_cumulant() {
    let g = grid();
    let model = EmitterModel::simplified(0.0, 0.5, 80.0).unwrap();
    let k1 = cumulant_image_expected(&model, &g, 0.5, 1).unwrap();
    let k2 = cumulant_image_expected(&model, &g, 0.5, 2).unwrap();
    for (a, b) in k1.iter().zip(&k2) {
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn mean_image_estimator_respects_cramer_rao_bound() {
    let g = DetectorGeometry::standard(1.0, 1.0).unwrap();
    let model = EmitterModel::simplified(0.8, 0.5, 50.0).unwrap();
    let theta = 1.0;
    let frames = 400;
    let analytic = summary(SchemeSpec::M, &g, &model, theta).unwrap();
    let per_frame_fi = gaussian_fi(&analytic).unwrap();
    // Delta-method linear estimator from the pixel means.
    let chol = analytic.sigma1.clone().cholesky().expect("covariance of the mean image is positive definite");
    let gain = chol.solve(&analytic.dmu_dtheta) / per_frame_fi;
    let replicas = simulate_replicas(&model, &g, theta, frames, 99, 400).unwrap();
    let estimates: Vec<f64> = replicas
        .iter()
        .map(|b| {
            let means = b.pixel_means();
            let nbar = DVector::from_iterator(analytic.len(), analytic.pixels.iter().map(|&j| means[j]));
            theta + gain.dot(&(nbar - &analytic.mu))
        })
        .collect();
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let bound = 1.0 / (frames as f64 * per_frame_fi);
    let stderr = var * (2.0 / (r - 1.0)).sqrt();
    assert!(var >= bound - 3.0 * stderr, "var {var}, bound {bound}, stderr {stderr}");
    assert!((mean - theta).abs() < 5.0 * (var / r).sqrt());
}

#[test]
fn score_oracle_reproduces_ideal_imaging_without_fluctuations() {
    let model = EmitterModel::simplified(0.0, 0.5, 20.0).unwrap();
    let theta = 0.02;
    let est = score_fi_oracle(&model, theta, 200_000, 5).unwrap();
    let exact = si_fisher_exact(theta, 1.0).unwrap();
    assert!(
        (est.fi_per_photon - exact).abs() <= 2.0 * est.stderr,
        "{} ± {} vs {exact}",
        est.fi_per_photon,
        est.stderr
    );
}

#[test]
fn score_information_scales_quadratically() {
    let model = EmitterModel::simplified(1.0, 0.5, 20.0).unwrap();
    let thetas = [0.005, 0.01, 0.02];
    let logs: Vec<(f64, f64)> = thetas
        .iter()
        .map(|&t| {
            let est = score_fi_oracle(&model, t, 200_000, 41).unwrap();
            (t.ln(), est.fi_per_photon.ln())
        })
        .collect();
    let xbar = logs.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let ybar = logs.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = logs.iter().map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>()
        / logs.iter().map(|(x, _)| (x - xbar).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() < 0.1, "exponent {slope}");
}
