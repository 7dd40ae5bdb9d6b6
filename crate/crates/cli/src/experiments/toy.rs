//! Small linear toys for the particle updates: agreement with the exact iteration and
//! the `1/√N` decay of the empirical operator distance.

use moderr::errormodels::{run_iterative_particle, ParticleOptions, ResultTrace, UpdateKind};
use moderr::gaussian::{fit_line, run_linear_iteration, DEFAULT_TOL};
use moderr::particles::{
    empirical_operator_distance, importance_update_with, model_error_sample,
    resample_draw_update, sample_prior, BoundedNoiseDensity, GridMeasure1D, IndexRule,
    ParticleEnsemble, PriorRejectionSampler, RngSpec, TestFunction,
};
use moderr::{Error, ForwardModelPair, GaussianMeasure, LinearModelPair, LinearPair, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::ToyConfig;

/// Accurate and approximate gains of the scalar toy `F(u) = a★u`, `f(u) = au`.
pub const TOY_GAINS: (f64, f64) = (1.5, 1.0);
/// Observed datum of the scalar toy.
pub const TOY_DATUM: f64 = 1.2;
/// Half-width of the quadrature interval for the scalar reference.
const GRID_HALF_WIDTH: f64 = 8.0;

/// Which particle scheme a rig uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rig {
    /// Exact conditional draws by rejection from the prior.
    ExactSampling,
    /// Fresh prior draws weighted by the mixture likelihood.
    Importance,
}

impl Rig {
    pub fn tag(&self) -> &'static str {
        match self {
            Rig::ExactSampling => "exact",
            Rig::Importance => "importance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtNRow {
    pub rig: Rig,
    pub particles: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtNReport {
    pub rows: Vec<SqrtNRow>,
    /// Slope of `ln d` against `ln N` per rig.
    pub slopes: Vec<(Rig, f64)>,
}

fn scalar_pair() -> Result<LinearPair> {
    let (a_star, a) = TOY_GAINS;
    LinearPair::new(
        DMatrix::from_element(1, 1, a_star),
        DMatrix::from_element(1, 1, a),
    )
}

fn test_functions() -> Vec<Box<TestFunction>> {
    vec![
        Box::new(|u: &DVector<f64>| u[0].tanh()),
        Box::new(|u: &DVector<f64>| u[0].sin()),
        Box::new(|u: &DVector<f64>| u[0].cos()),
        Box::new(|u: &DVector<f64>| 1.0 / (1.0 + u[0] * u[0])),
    ]
}

/// Quadrature reference for generation `generation` of the scalar toy.
pub fn scalar_reference(cfg: &ToyConfig, noise: &BoundedNoiseDensity) -> Result<GridMeasure1D> {
    let (a_star, a) = TOY_GAINS;
    let log_prior = |x: f64| -0.5 * x * x;
    let mut grid =
        GridMeasure1D::from_log_density(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, cfg.grid_points, log_prior)?;
    for _ in 0..cfg.generation {
        grid = grid.iterate(log_prior, |x| a * x, |x| (a_star - a) * x, noise, TOY_DATUM)?;
    }
    Ok(grid)
}

/// Generation `cfg.generation` of one replicate of `rig` with `n` particles.
pub fn scalar_replicate(
    cfg: &ToyConfig,
    rig: Rig,
    n: usize,
    noise: &BoundedNoiseDensity,
    rng: &RngSpec,
) -> Result<ParticleEnsemble> {
    let pair = scalar_pair()?;
    let prior = GaussianMeasure::standard(1);
    let b = DVector::from_element(1, TOY_DATUM);
    let sampler = PriorRejectionSampler::new(&prior, |u: &DVector<f64>| pair.approximate(u), noise, b.clone())?;
    let mut ensemble = sample_prior(&prior, n, rng)?;
    for _ in 0..cfg.generation {
        let me = model_error_sample(&ensemble, &pair)?;
        ensemble = match rig {
            Rig::ExactSampling => {
                resample_draw_update(&ensemble, &me, &sampler, rng, IndexRule::EvidenceWeighted)?
            }
            Rig::Importance => importance_update_with(&ensemble, &me, &pair, noise, &prior, &b, rng)?,
        };
    }
    Ok(ensemble)
}

/// Empirical operator distance to the quadrature reference for every rig and particle count.
pub fn run_sqrt_n(cfg: &ToyConfig, seed: u64) -> Result<SqrtNReport> {
    let noise = BoundedNoiseDensity::clamped(
        DMatrix::from_element(1, 1, cfg.noise_std * cfg.noise_std),
        cfg.kappa,
    )?;
    let reference = scalar_reference(cfg, &noise)?.to_ensemble(cfg.generation)?;
    let functions = test_functions();
    let refs: Vec<&TestFunction> = functions.iter().map(|f| f.as_ref()).collect();
    let master = RngSpec::new(seed);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for rig in [Rig::ExactSampling, Rig::Importance] {
        let mut log_n = Vec::new();
        let mut log_d = Vec::new();
        for &n in &cfg.particle_counts {
            let replicates = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| scalar_replicate(cfg, rig, n, &noise, &master.child(((n as u64) << 20) | r as u64)))
                .collect::<Result<Vec<_>>>()?;
            let distance = empirical_operator_distance(&reference, &replicates, &refs);
            log_n.push((n as f64).ln());
            log_d.push(distance.ln());
            rows.push(SqrtNRow {
                rig,
                particles: n,
                distance,
            });
        }
        slopes.push((rig, fit_line(&log_n, &log_d).0));
    }
    Ok(SqrtNReport { rows, slopes })
}

/// The linear toy of [`consistency_replicate`]: model, data and exact iterates.
#[derive(Debug, Clone)]
pub struct ConsistencyToy {
    pub model: LinearModelPair,
    pub pair: LinearPair,
    pub gamma: DMatrix<f64>,
    pub b: DVector<f64>,
    pub exact_means: Vec<DVector<f64>>,
    /// Largest marginal standard deviation of each exact iterate.
    pub sigma_max: Vec<f64>,
}

pub fn consistency_toy(generations: usize) -> Result<ConsistencyToy> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let a_star = &a + DMatrix::from_row_slice(2, 2, &[0.15, 0.0, 0.06, 0.12]);
    let gamma = DMatrix::from_diagonal_element(2, 2, 0.25);
    let prior = GaussianMeasure::standard(2);
    let b = DVector::from_vec(vec![1.0, -0.5]);
    let model = LinearModelPair::new(a_star.clone(), a.clone(), gamma.clone(), prior)?;
    let trace = run_linear_iteration(&model, &b, generations, DEFAULT_TOL)?;
    let covs = trace.covariances.full().ok_or(Error::SummaryOnly)?;
    let sigma_max = covs.iter().map(|c| c.diagonal().max().sqrt()).collect();
    Ok(ConsistencyToy {
        model,
        pair: LinearPair::new(a_star, a)?,
        gamma,
        b,
        exact_means: trace.means,
        sigma_max,
    })
}

/// Largest over `ℓ ≤ generations` of `‖mean_ℓ − m_ℓ‖_∞ / (σ_max,ℓ/√N)` for one seeded
/// mixture-update run.
pub fn consistency_replicate(toy: &ConsistencyToy, n: usize, rng: &RngSpec) -> Result<f64> {
    let generations = toy.exact_means.len() - 1;
    let result = run_iterative_particle(
        &toy.pair,
        toy.model.prior(),
        &toy.gamma,
        &toy.b,
        generations,
        n,
        rng,
        UpdateKind::Mixture,
        &ParticleOptions {
            skip_kl: true,
            ..ParticleOptions::default()
        },
    )?;
    let ResultTrace::Particle(trace) = result.trace else {
        return Err(Error::InvalidArgument("particle run without a particle trace".into()));
    };
    let scale = (n as f64).sqrt();
    Ok(trace
        .generations
        .iter()
        .zip(&toy.exact_means)
        .zip(&toy.sigma_max)
        .map(|((g, m), s)| (&g.ensemble_mean - m).amax() * scale / s)
        .fold(0.0, f64::max))
}
