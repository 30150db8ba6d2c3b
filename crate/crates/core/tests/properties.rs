//! Property tests over randomly drawn parameters.

use nalgebra::SymmetricEigen;
use proptest::prelude::*;

use sofi_rgl::blinking::{stationary_state, transition_matrix, EmitterModel};
use sofi_rgl::fisher::{gaussian_fi, rgl};
use sofi_rgl::model::DetectorGeometry;
use sofi_rgl::summary::{markov_summary, simplified_summary, summary, SchemeSpec};

fn coarse() -> DetectorGeometry {
    DetectorGeometry::standard(1.0, 1.0).unwrap()
}

fn fi(scheme: SchemeSpec, model: &EmitterModel, theta: f64) -> f64 {
    gaussian_fi(&summary(scheme, &coarse(), model, theta).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn transition_semigroup_and_stationarity(
        tau_on in 0.05f64..5.0,
        tau_off in 0.05f64..5.0,
        s in 0.0f64..4.0,
        t in 0.0f64..4.0,
    ) {
        let model = EmitterModel::markov(0.7, tau_on, tau_off, 1.0).unwrap();
        let composed = transition_matrix(s, &model).unwrap() * transition_matrix(t, &model).unwrap();
        let direct = transition_matrix(s + t, &model).unwrap();
        prop_assert!((composed - direct).abs().max() < 1e-12);
        let (p_off, p_on) = stationary_state(&model).unwrap();
        let pi = nalgebra::Vector2::new(p_off, p_on);
        prop_assert!((transition_matrix(t, &model).unwrap() * pi - pi).abs().max() < 1e-12);
    }

    #[test]
    fn nested_schemes_never_lose_information(
        alpha in 0.1f64..1.0,
        p_off in 0.1f64..0.9,
        nbar in 5.0f64..500.0,
        theta in 0.05f64..1.5,
    ) {
        let model = EmitterModel::simplified(alpha, p_off, nbar).unwrap();
        let m = fi(SchemeSpec::M, &model, theta);
        let mac2 = fi(SchemeSpec::MAck(2), &model, theta);
        let mxc2 = fi(SchemeSpec::MXc2, &model, theta);
        let mxc2s = fi(SchemeSpec::MXc2s, &model, theta);
        let slack = |x: f64| 1e-9 * (1.0 + x);
        prop_assert!(mac2 >= m - slack(m), "M {m} > M+AC2 {mac2}");
        prop_assert!(mxc2 >= mac2 - slack(mac2), "M+AC2 {mac2} > M+XC2 {mxc2}");
        prop_assert!(mxc2 >= mxc2s - slack(mxc2s), "M+XC2s {mxc2s} > M+XC2 {mxc2}");
    }

    #[test]
    fn covariances_are_positive_semidefinite(
        alpha in 0.0f64..1.0,
        nbar in 1.0f64..1000.0,
        theta in 0.0f64..2.0,
        background in 0.0f64..5.0,
        markov in any::<bool>(),
    ) {
        let model = if markov {
            EmitterModel::markov(alpha, 1.0, 1.0, nbar).unwrap()
        } else {
            EmitterModel::simplified(alpha, 0.5, nbar).unwrap()
        };
        let g = coarse().with_background(background).unwrap();
        let s = summary(SchemeSpec::MXc2, &g, &model, theta).unwrap();
        let eig = SymmetricEigen::new(s.sigma1.clone()).eigenvalues;
        let max = eig.max();
        prop_assert!(eig.min() >= -1e-9 * max);
    }

    #[test]
    fn models_agree_without_fluctuations(
        nbar in 1.0f64..1000.0,
        theta in 0.0f64..2.0,
        tau in 0.1f64..10.0,
        background in 0.0f64..3.0,
    ) {
        let g = coarse().with_frame_time(tau).unwrap().with_background(background).unwrap();
        let simple = EmitterModel::simplified(0.0, 0.5, nbar).unwrap();
        let markov = EmitterModel::markov(0.0, 1.0, 1.0, nbar).unwrap();
        let a = simplified_summary(SchemeSpec::MAck(2), &g, &simple, theta).unwrap();
        let b = markov_summary(SchemeSpec::MAck(2), &g, &markov, theta).unwrap();
        let scale = 1.0 + a.sigma1.abs().max();
        prop_assert!((&a.mu - &b.mu).abs().max() <= 1e-9 * (1.0 + a.mu.abs().max()));
        prop_assert!((&a.sigma1 - &b.sigma1).abs().max() <= 1e-9 * scale);
    }

    #[test]
    fn reflection_maps_summary_onto_itself(
        alpha in 0.0f64..1.0,
        nbar in 1.0f64..300.0,
        theta in 0.0f64..2.0,
    ) {
        let g = coarse();
        let model = EmitterModel::simplified(alpha, 0.4, nbar).unwrap();
        let s = summary(SchemeSpec::MXc2, &g, &model, theta).unwrap();
        let index_of = |c| s.components.iter().position(|&d| d == c).unwrap();
        let perm: Vec<usize> = s.components.iter().map(|c| index_of(c.mirrored(g.n_pixels))).collect();
        let scale = 1.0 + s.sigma1.abs().max();
        for i in 0..s.len() {
            prop_assert!((s.mu[i] - s.mu[perm[i]]).abs() <= 1e-10 * (1.0 + s.mu[i].abs()));
            for j in 0..s.len() {
                prop_assert!((s.sigma1[(i, j)] - s.sigma1[(perm[i], perm[j])]).abs() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn weighted_centroids_sit_between_plain_and_full_cross_products() {
    let g = DetectorGeometry::standard(0.5, 1.0).unwrap();
    let points = [10.0, 100.0, 1000.0, 1e4]
        .iter()
        .map(|&n| (1.0, n))
        .chain([0.25, 0.5, 0.75].iter().map(|&a| (a, 1000.0)));
    for (alpha, nbar) in points {
        let model = EmitterModel::simplified(alpha, 0.5, nbar).unwrap();
        let z = |s| rgl(s, &g, &model).unwrap().zeta;
        let (plain, weighted, full) = (z(SchemeSpec::MXc2s), z(SchemeSpec::MXc2w), z(SchemeSpec::MXc2));
        assert!(weighted >= plain - 1e-9, "α={alpha} n̄={nbar}: {weighted} < {plain}");
        assert!(weighted <= full + 1e-9, "α={alpha} n̄={nbar}: {weighted} > {full}");
    }
}
