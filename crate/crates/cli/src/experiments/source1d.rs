//! Inverse source problem: conventional versus iterative error model across coarse levels.

use moderr::errormodels::{run_conventional, run_iterative_linear, ResultTrace};
use moderr::gaussian::{
    estimate_rate, fit_line, limit_deviations, posterior_update, LimitDeviations,
};
use moderr::models::{brownian_prior, poisson1d_pair, synthesize_data, Poisson1DConfig};
use moderr::models::{draw_truth, LinearPair};
use moderr::particles::RngSpec;
use moderr::{Error, LinearModelPair, Result};
use nalgebra::DVector;

use crate::config::Source1dConfig;

/// One coarse level of the comparison.
#[derive(Debug, Clone)]
pub struct Source1dRow {
    pub level: u32,
    pub mean_err_iter: f64,
    pub mean_err_conv: f64,
    pub cov_err_iter: f64,
    pub cov_err_conv: f64,
    pub slope_mean: f64,
    pub slope_cov: f64,
    /// `r²` of the log-linear fit to the mean errors.
    pub r2_mean: f64,
    pub opnorm_gap: f64,
    /// `‖m_ℓ − m_post‖` and `‖C_ℓ − C_post‖_F`, `ℓ = 0…L`.
    pub post_mean_errors: Vec<f64>,
    pub post_cov_errors: Vec<f64>,
    /// `‖m_ℓ − m_L‖` and `‖C_ℓ − C_L‖_F` from the increment recurrence.
    pub deviations: LimitDeviations,
    pub converged_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Source1dReport {
    pub rows: Vec<Source1dRow>,
    pub truth: DVector<f64>,
    pub data: DVector<f64>,
}

/// Deviations below this are treated as converged.
///
/// The increment recurrence has no round-off plateau, so the floor only guards underflow.
pub const DEVIATION_FLOOR: f64 = 1e-150;

/// Slope and `r²` of `ln e_ℓ` over `1 ≤ ℓ < L` above [`DEVIATION_FLOOR`].
///
/// ℓ = 0 is skipped: the prior sits outside the geometric regime of the iteration.
pub fn fit_decay(errors: &[f64]) -> Result<(f64, f64)> {
    let tail = errors.get(1..).unwrap_or(&[]);
    let slope = estimate_rate(tail, Some(DEVIATION_FLOOR))?;
    let usable = tail.iter().take_while(|e| **e > DEVIATION_FLOOR).count();
    let x: Vec<f64> = (0..usable).map(|l| l as f64).collect();
    let y: Vec<f64> = tail[..usable].iter().map(|e| e.ln()).collect();
    Ok((slope, fit_line(&x, &y).1))
}

pub fn run_source1d(cfg: &Source1dConfig, seed: u64) -> Result<Source1dReport> {
    let rng = RngSpec::new(seed);
    let truth_prior = brownian_prior(cfg.parameter_level)?;
    let truth = draw_truth(&truth_prior, &rng)?;
    let reference = moderr::models::poisson1d_operator(cfg.parameter_level, cfg.fine_level)?;
    let identity = LinearPair::new(reference.clone(), reference)?;
    let gamma = Poisson1DConfig {
        noise_var: cfg.noise_var,
        ..Poisson1DConfig::default()
    }
    .gamma();
    let data = synthesize_data(&identity, &truth, &gamma, &rng)?;

    let mut rows = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        let pc = Poisson1DConfig {
            fine_level: cfg.fine_level,
            coarse_level: level,
            parameter_level: Some(cfg.parameter_level),
            noise_var: cfg.noise_var,
        };
        let pair = poisson1d_pair(&pc)?;
        let prior = brownian_prior(pair.param_level())?;
        let exact = posterior_update(&prior, pair.a_star(), &gamma, &DVector::zeros(gamma.nrows()), &data)?;
        let conv = run_conventional(&pair, &prior, &gamma, &data)?;
        let model = LinearModelPair::new(
            pair.a_star().clone(),
            pair.a_coarse().clone(),
            gamma.clone(),
            prior.clone(),
        )?;
        let iter = run_iterative_linear(&model, &data, cfg.iterations, Some(&exact))?;
        let (converged_at, ref_mean, ref_cov) = match iter.trace {
            ResultTrace::Gaussian {
                trace,
                reference_mean_errors,
                reference_cov_errors,
            } => (trace.converged_at, reference_mean_errors, reference_cov_errors),
            _ => return Err(Error::InvalidArgument("linear run without a Gaussian trace".into())),
        };
        let deviations = limit_deviations(&model, &data, cfg.iterations)?;
        let (slope_mean, r2_mean) = fit_decay(&deviations.mean)?;
        let (slope_cov, _) = fit_decay(&deviations.cov)?;
        let conv_cov = conv.covariance.as_ref().expect("Gaussian path keeps its covariance");
        rows.push(Source1dRow {
            level,
            mean_err_iter: *ref_mean.last().expect("nonempty"),
            cov_err_iter: *ref_cov.last().expect("nonempty"),
            mean_err_conv: (&conv.estimate - exact.mean()).norm(),
            cov_err_conv: (conv_cov - exact.covariance()).norm(),
            slope_mean,
            slope_cov,
            r2_mean,
            opnorm_gap: pair.operator_gap(),
            post_mean_errors: ref_mean,
            post_cov_errors: ref_cov,
            deviations,
            converged_at,
        });
    }
    Ok(Source1dReport { rows, truth, data })
}
