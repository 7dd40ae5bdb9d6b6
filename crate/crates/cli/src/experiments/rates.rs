//! Synthetic sweep of the model-error scale δ against the contraction bound.

use moderr::gaussian::{contraction_bound, limit_deviations, run_linear_iteration, DEFAULT_TOL};
use moderr::models::draw_noise;
use moderr::particles::{standard_normal_vector, Purpose, RngSpec};
use moderr::{GaussianMeasure, LinearModelPair, Result};
use nalgebra::{DMatrix, DVector};

use super::source1d::fit_decay;
use crate::config::RatesConfig;

/// Noise variance of the synthetic instance.
pub const RATES_NOISE_VAR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub delta: f64,
    /// `β̂·δ`.
    pub bound: f64,
    /// Fitted log-rates; `−∞` when the iteration is exact after one step.
    pub mean_rate: f64,
    pub cov_rate: f64,
    pub converged_at: Option<usize>,
}

/// A random pair with `‖A★ − A‖₂` scaled so that `β̂ = 1`; `δ` then equals `β̂δ`.
pub fn rates_instance(cfg: &RatesConfig, seed: u64) -> Result<(LinearModelPair, DVector<f64>)> {
    let rng = RngSpec::new(seed);
    let (j, d) = (cfg.data_dim, cfg.param_dim);
    let mut stream = rng.stream(Purpose::Truth, 1, 0);
    let a = DMatrix::from_iterator(j, d, standard_normal_vector(&mut stream, j * d).iter().copied());
    let e = DMatrix::from_iterator(j, d, standard_normal_vector(&mut stream, j * d).iter().copied());
    let prior = GaussianMeasure::standard(d);
    let gamma = DMatrix::from_diagonal_element(j, j, RATES_NOISE_VAR);
    let unscaled = LinearModelPair::new(&a + &e, a.clone(), gamma.clone(), prior.clone())?;
    let beta = contraction_bound(&unscaled)?;
    let a_star = &a + e / beta;
    let truth = standard_normal_vector(&mut stream, d);
    let b = &a_star * truth + draw_noise(&gamma, &rng)?;
    Ok((LinearModelPair::new(a_star, a, gamma, prior)?, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesReport {
    pub beta_hat: f64,
    pub rows: Vec<RateRow>,
}

pub fn run_rates(cfg: &RatesConfig, seed: u64) -> Result<RatesReport> {
    let (base, b) = rates_instance(cfg, seed)?;
    let beta = contraction_bound(&base)?;
    let rows = 
    cfg.deltas
        .iter()
        .map(|&delta| {
            let model = base.clone().with_delta(delta)?;
            let dev = limit_deviations(&model, &b, cfg.iterations)?;
            let exact = dev.mean.iter().skip(1).all(|e| *e == 0.0);
            let (mean_rate, cov_rate) = if exact {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            } else {
                (fit_decay(&dev.mean)?.0, fit_decay(&dev.cov)?.0)
            };
            let converged_at = run_linear_iteration(&model, &b, cfg.iterations, DEFAULT_TOL)?.converged_at;
            Ok(RateRow {
                delta,
                bound: beta * delta,
                mean_rate,
                cov_rate,
                converged_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RatesReport { beta_hat: beta, rows })
}
