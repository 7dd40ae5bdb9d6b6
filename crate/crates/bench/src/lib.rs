//! Fixtures shared by the kernel benchmarks.

use moderr::gaussian::GaussianMeasure;
use moderr::models::{brownian_prior, poisson1d_pair, Darcy2DConfig, DarcyGrid, Poisson1DConfig};
use moderr::particles::{sample_prior, RngSpec};
use moderr::{LinearModelPair, ParticleEnsemble, Result};
use nalgebra::{DMatrix, DVector};

pub const SEED: u64 = 7;

/// Source problem at coarse level `n` with parameters on level `param_level`.
pub fn source1d_model(n: u32, param_level: u32) -> Result<(LinearModelPair, DVector<f64>)> {
    let config = Poisson1DConfig {
        fine_level: 10,
        coarse_level: n,
        parameter_level: Some(param_level),
        noise_var: 1e-8,
    };
    let pair = poisson1d_pair(&config)?;
    let prior = brownian_prior(param_level)?;
    let b = pair.a_star() * DVector::from_element(prior.dim(), 1.0);
    let model = LinearModelPair::new(pair.a_star().clone(), pair.a_coarse().clone(), config.gamma(), prior)?;
    Ok((model, b))
}

/// A smooth log-permeability on `grid`.
pub fn darcy_field(grid: &DarcyGrid) -> DVector<f64> {
    grid.sample(|x, y| 0.5 * (2.0 * std::f64::consts::PI * x).sin() * y + 0.2 * x)
}

pub fn darcy_config() -> Darcy2DConfig {
    Darcy2DConfig::default()
}

/// `n` prior draws in dimension `d` with an identity covariance.
pub fn ensemble(d: usize, n: usize) -> Result<(GaussianMeasure, ParticleEnsemble)> {
    let prior = GaussianMeasure::new(DVector::zeros(d), DMatrix::identity(d, d))?;
    let e = sample_prior(&prior, n, &RngSpec::new(SEED))?;
    Ok((prior, e))
}
