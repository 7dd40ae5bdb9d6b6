use moderr::errormodels::ModelErrorFit;
use moderr::gaussian::{posterior_update, run_linear_iteration};
use moderr::models::AffineMap;
use moderr::particles::{
    effective_sample_size, ensemble_moments, importance_update, kl_divergence_delta,
    likelihood_record, mixture_mean, mixture_update, model_error_sample, resample_draw_update,
    sample_prior, systematic_resample, BoundedNoiseDensity, GaussianConditional, GridMeasure1D,
    IndexRule, PriorRejectionSampler,
};
use moderr::{GaussianMeasure, LinearModelPair, LinearPair, ModelErrorSample, ParticleEnsemble, RngSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar_prior() -> GaussianMeasure {
    GaussianMeasure::standard(1)
}

#[test]
fn zero_covariance_prior_gives_the_mean() {
    let prior = GaussianMeasure::new(DVector::from_vec(vec![0.5, -2.0]), DMatrix::zeros(2, 2)).unwrap();
    let e = sample_prior(&prior, 20, &RngSpec::new(1)).unwrap();
    assert!(e.particles().iter().all(|u| u == prior.mean()));
}

#[test]
fn standard_normal_sample_statistics() {
    let n = 100_000;
    let e = sample_prior(&scalar_prior(), n, &RngSpec::new(2)).unwrap();
    let (mean, var) = ensemble_moments(&e);
    assert!(mean[0].abs() < 4.0 / (n as f64).sqrt(), "mean {}", mean[0]);
    assert!((var[0] - 1.0).abs() < 0.05, "variance {}", var[0]);
    assert_eq!(e, sample_prior(&scalar_prior(), n, &RngSpec::new(2)).unwrap());
}

#[test]
fn sampling_ignores_the_thread_count() {
    let prior = GaussianMeasure::new(DVector::zeros(3), DMatrix::identity(3, 3) * 2.0).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_prior(&prior, 500, &RngSpec::new(3)).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn linear_model_errors_are_exact() {
    let a_star = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, 0.0, 0.7]);
    let pair = LinearPair::new(a_star.clone(), a.clone()).unwrap();
    let e = sample_prior(&GaussianMeasure::standard(2), 10, &RngSpec::new(4)).unwrap();
    let me = model_error_sample(&e, &pair).unwrap();
    for (u, m) in e.particles().iter().zip(me.errors()) {
        assert!((m - (&a_star - &a) * u).norm() < 1e-14);
    }
    let same = LinearPair::new(a.clone(), a).unwrap();
    let me = model_error_sample(&e, &same).unwrap();
    assert!(me.errors().iter().all(|m| m.iter().all(|v| *v == 0.0)));
}

#[test]
fn zero_model_error_mixture_samples_the_posterior() {
    let prior = GaussianMeasure::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let gamma = DMatrix::from_element(1, 1, 0.2);
    let b = DVector::from_element(1, 0.7);
    let n = 5000;
    let rng = RngSpec::new(5);
    let e = sample_prior(&prior, n, &rng).unwrap();
    let me = ModelErrorSample::from_errors(vec![DVector::zeros(1); n], 0);
    let next = mixture_update(&e, &me, &a, &gamma, &prior, &b, &rng).unwrap();
    let post = posterior_update(&prior, &a, &gamma, &DVector::zeros(1), &b).unwrap();
    let (mean, _) = ensemble_moments(&next);
    let sigma = post.covariance().diagonal().max().sqrt();
    assert!((mean - post.mean()).amax() < 4.0 * sigma / (n as f64).sqrt());
    assert_eq!(next.generation(), 1);
    assert!(next.weights().iter().all(|w| (*w - 1.0 / n as f64).abs() < 1e-15));
}

#[test]
fn mixture_and_generic_update_coincide() {
    let prior = GaussianMeasure::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let gamma = DMatrix::identity(2, 2) * 0.25;
    let b = DVector::from_vec(vec![1.0, -0.5]);
    let rng = RngSpec::new(6);
    let e = sample_prior(&prior, 200, &rng).unwrap();
    let pair = LinearPair::new(&a * 1.1, a.clone()).unwrap();
    let me = model_error_sample(&e, &pair).unwrap();
    let via_mixture = mixture_update(&e, &me, &a, &gamma, &prior, &b, &rng).unwrap();
    let inner = GaussianConditional::new(&prior, &AffineMap::linear(a.clone()), &gamma, &b).unwrap();
    let generic = resample_draw_update(&e, &me, &inner, &rng, IndexRule::EvidenceWeighted).unwrap();
    assert_eq!(via_mixture, generic);
}

#[test]
fn single_particle_mixture_step() {
    let prior = scalar_prior();
    let rng = RngSpec::new(7);
    let e = sample_prior(&prior, 1, &rng).unwrap();
    let me = ModelErrorSample::from_errors(vec![DVector::from_element(1, 0.3)], 0);
    let a = DMatrix::from_element(1, 1, 1.0);
    let next = mixture_update(&e, &me, &a, &a, &prior, &DVector::from_element(1, 1.0), &rng).unwrap();
    assert_eq!(next.len(), 1);
    assert_eq!(next.weights(), &[1.0]);
}

#[test]
fn point_mass_weights_pick_the_first_component() {
    let prior = scalar_prior();
    let e = ParticleEnsemble::new(
        vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)],
        vec![1.0, 0.0, 0.0],
        0,
    )
    .unwrap();
    let me = ModelErrorSample::from_errors(
        vec![DVector::from_element(1, -5.0), DVector::from_element(1, 0.0), DVector::from_element(1, 5.0)],
        0,
    );
    let a = DMatrix::from_element(1, 1, 1.0);
    let gamma = DMatrix::from_element(1, 1, 1e-4);
    let b = DVector::from_element(1, 0.0);
    let inner = GaussianConditional::new(&prior, &AffineMap::linear(a), &gamma, &b).unwrap();
    let next = resample_draw_update(&e, &me, &inner, &RngSpec::new(8), IndexRule::EnsembleWeights).unwrap();
    // component 0 has b − m = 5, so every draw sits near 5
    assert!(next.particles().iter().all(|u| (u[0] - 5.0).abs() < 0.1));
}

#[test]
fn flat_likelihood_gives_uniform_importance_weights() {
    let prior = scalar_prior();
    let rng = RngSpec::new(9);
    let e = sample_prior(&prior, 50, &rng).unwrap();
    let pair = LinearPair::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let flat = BoundedNoiseDensity::clamped(DMatrix::from_element(1, 1, 0.1), 1.0).unwrap();
    let next = importance_update(&e, &pair, &flat, &prior, &DVector::from_element(1, 3.0), &rng).unwrap();
    assert!(next.weights().iter().all(|w| (w - 0.02).abs() < 1e-15));
    let one = sample_prior(&prior, 1, &rng).unwrap();
    let noise = BoundedNoiseDensity::gaussian(DMatrix::from_element(1, 1, 0.1)).unwrap();
    let next = importance_update(&one, &pair, &noise, &prior, &DVector::from_element(1, 3.0), &rng).unwrap();
    assert_eq!(next.weights(), &[1.0]);
}

#[test]
fn importance_mean_tracks_the_exact_iteration() {
    let gamma = DMatrix::from_element(1, 1, 0.5);
    let (a_star, a) = (DMatrix::from_element(1, 1, 1.3), DMatrix::from_element(1, 1, 1.0));
    let prior = scalar_prior();
    let b = DVector::from_element(1, 0.8);
    let model = LinearModelPair::new(a_star.clone(), a.clone(), gamma.clone(), prior.clone()).unwrap();
    let exact = run_linear_iteration(&model, &b, 2, 0.0).unwrap();
    let pair = LinearPair::new(a_star, a).unwrap();
    let noise = BoundedNoiseDensity::clamped(gamma, 1e-12).unwrap();
    let n = 20_000;
    let rng = RngSpec::new(10);
    let mut e = sample_prior(&prior, n, &rng).unwrap();
    for _ in 0..2 {
        e = importance_update(&e, &pair, &noise, &prior, &b, &rng).unwrap();
    }
    let (mean, var) = ensemble_moments(&e);
    let se = (var[0] / effective_sample_size(e.weights())).sqrt();
    assert!((mean[0] - exact.means[2][0]).abs() < 3.0 * se, "{} vs {} (se {se})", mean[0], exact.means[2][0]);
}

#[test]
fn mixture_mean_follows_the_exact_iteration() {
    let prior = GaussianMeasure::standard(2);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let a_star = &a + DMatrix::from_row_slice(2, 2, &[0.15, 0.0, 0.06, 0.12]);
    let gamma = DMatrix::identity(2, 2) * 0.25;
    let b = DVector::from_vec(vec![1.0, -0.5]);
    let model = LinearModelPair::new(a_star.clone(), a.clone(), gamma.clone(), prior.clone()).unwrap();
    let exact = run_linear_iteration(&model, &b, 5, 0.0).unwrap();
    let pair = LinearPair::new(a_star, a.clone()).unwrap();
    let inner = GaussianConditional::new(&prior, &AffineMap::linear(a.clone()), &gamma, &b).unwrap();
    let n = 5000;
    let rng = RngSpec::new(11);
    let mut e = sample_prior(&prior, n, &rng).unwrap();
    for l in 1..=5 {
        let me = model_error_sample(&e, &pair).unwrap();
        let predicted = mixture_mean(&e, &me, &inner, IndexRule::EvidenceWeighted).unwrap();
        e = mixture_update(&e, &me, &a, &gamma, &prior, &b, &rng).unwrap();
        let (mean, var) = ensemble_moments(&e);
        let se = var.map(|v| (v / n as f64).sqrt());
        for i in 0..2 {
            assert!((mean[i] - exact.means[l][i]).abs() < 3.0 * se[i] * 2f64.sqrt() + 1e-12);
            assert!((predicted[i] - exact.means[l][i]).abs() < 3.0 * se[i]);
        }
    }
}

#[test]
fn bimodal_generation_matches_quadrature() {
    let gamma = DMatrix::from_element(1, 1, 0.09);
    let noise = BoundedNoiseDensity::clamped(gamma, 0.05).unwrap();
    let prior = scalar_prior();
    let b = 1.0;
    let rng = RngSpec::new(12);
    let n = 100_000;
    let e = sample_prior(&prior, n, &rng).unwrap();
    let accurate = |u: f64| u * u + 0.1 * u;
    let approx = |u: f64| u * u;
    let errors: Vec<DVector<f64>> = e.particles().iter().map(|u| DVector::from_element(1, accurate(u[0]) - approx(u[0]))).collect();
    let me = ModelErrorSample::from_errors(errors, 0);
    let sampler = PriorRejectionSampler::new(&prior, |u: &DVector<f64>| Ok(u.map(|x| x * x)), &noise, DVector::from_element(1, b)).unwrap();
    let next = resample_draw_update(&e, &me, &sampler, &rng, IndexRule::EvidenceWeighted).unwrap();

    let log_prior = |u: f64| -0.5 * u * u;
    let start = GridMeasure1D::from_log_density(-6.0, 6.0, 10_000, log_prior).unwrap();
    let grid = start.iterate(log_prior, approx, |u| accurate(u) - approx(u), &noise, b).unwrap();
    let edges: Vec<f64> = (0..=48).map(|i| -3.0 + 0.125 * i as f64).collect();
    let mass = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { edges.windows(2).map(|w| f(w[0], w[1])).collect() };
    let sample = mass(&|lo, hi| next.particles().iter().filter(|u| u[0] >= lo && u[0] < hi).count() as f64 / n as f64);
    let quad = mass(&|lo, hi| grid.expectation(&|x: f64| if x >= lo && x < hi { 1.0 } else { 0.0 }));
    let tv = 0.5 * sample.iter().zip(&quad).map(|(s, q)| (s - q).abs()).sum::<f64>();
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn single_record_has_zero_divergence_delta() {
    let prior = scalar_prior();
    let e = sample_prior(&prior, 30, &RngSpec::new(13)).unwrap();
    let pair = LinearPair::new(DMatrix::from_element(1, 1, 1.2), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let me = model_error_sample(&e, &pair).unwrap();
    let noise = BoundedNoiseDensity::gaussian(DMatrix::from_element(1, 1, 0.3)).unwrap();
    let rec = likelihood_record(&e, &me, None, &noise, &DVector::from_element(1, 0.4)).unwrap();
    let delta = kl_divergence_delta(&[rec]).unwrap();
    assert_eq!(delta.len(), 1);
    assert_eq!(delta[0].value, 0.0);
}

#[test]
fn model_error_fit_matches_pushforward_moments() {
    let prior = GaussianMeasure::new(DVector::from_vec(vec![0.5, -1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0])).unwrap();
    let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4]);
    let pair = LinearPair::new(&m + DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    let n = 10_000;
    let e = sample_prior(&prior, n, &RngSpec::new(14)).unwrap();
    let fit = ModelErrorFit::from_sample(model_error_sample(&e, &pair).unwrap().errors()).unwrap();
    let exact = ModelErrorFit::exact_linear(&m, &prior);
    let nf = n as f64;
    for i in 0..2 {
        let se_mean = (exact.covariance[(i, i)] / nf).sqrt();
        assert!((fit.mean[i] - exact.mean[i]).abs() < 3.0 * se_mean);
        for j in 0..2 {
            let (sii, sjj, sij) = (exact.covariance[(i, i)], exact.covariance[(j, j)], exact.covariance[(i, j)]);
            let se_cov = ((sii * sjj + sij * sij) / nf).sqrt();
            assert!((fit.covariance[(i, j)] - sij).abs() < 3.0 * se_cov);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn log_weights_always_normalize(logs in prop::collection::vec(-700.0..700.0f64, 1..40)) {
        let particles = vec![DVector::zeros(1); logs.len()];
        let e = ParticleEnsemble::from_log_weights(particles, &logs, 0).unwrap();
        prop_assert!((e.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(e.weights().iter().all(|w| *w >= 0.0));
        let ess = effective_sample_size(e.weights());
        prop_assert!(ess >= 1.0 - 1e-12 && ess <= logs.len() as f64 + 1e-9);
    }

    #[test]
    fn systematic_counts_stay_within_one(raw in prop::collection::vec(0.0..1.0f64, 1..20), n in 1usize..200, u0 in 0.0..1.0f64) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-9);
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let idx = systematic_resample(&probs, n, u0);
        prop_assert_eq!(idx.len(), n);
        for (k, p) in probs.iter().enumerate() {
            let count = idx.iter().filter(|i| **i == k).count() as f64;
            prop_assert!((count - p * n as f64).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn identical_seeds_give_identical_updates(seed in any::<u64>()) {
        let prior = GaussianMeasure::standard(2);
        let a = DMatrix::identity(2, 2);
        let gamma = DMatrix::identity(2, 2) * 0.5;
        let b = DVector::from_vec(vec![0.2, 0.1]);
        let pair = LinearPair::new(&a * 1.2, a.clone()).unwrap();
        let run = || {
            let rng = RngSpec::new(seed);
            let e = sample_prior(&prior, 40, &rng).unwrap();
            let me = model_error_sample(&e, &pair).unwrap();
            mixture_update(&e, &me, &a, &gamma, &prior, &b, &rng).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn clamped_density_stays_in_band(x in -50.0..50.0f64, kappa in 0.01..1.0f64) {
        let noise = BoundedNoiseDensity::clamped(DMatrix::from_element(1, 1, 0.3), kappa).unwrap();
        let v = noise.density(&DVector::from_element(1, x));
        prop_assert!(v >= kappa * (1.0 - 1e-12) && v <= (1.0 + 1e-12) / kappa);
    }
}
