//! The three inference drivers: conventional, enhanced and iterative error models.
//!
//! Gaussian paths report the posterior mean; particle paths report the weighted
//! ensemble mean. Truth errors use the Euclidean norm on the parameter vector.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{
    fmt_f64, run_linear_iteration_against, GaussianMeasure, IterationTrace, LinearModelPair,
    PriorProducts, DEFAULT_TOL,
};
use crate::linalg;
use crate::models::{AffineMap, CountingPair, ForwardModelPair};
use crate::particles::{
    effective_sample_size, ensemble_moments, importance_update_with, kl_divergence_delta,
    likelihood_record, mixture_mean, model_error_sample, resample_draw_update, sample_prior,
    BoundedNoiseDensity, Estimate, GaussianConditional, IndexRule, LikelihoodRecord,
    ModelErrorSample, ParticleEnsemble, Purpose, RngSpec,
};

/// Which particle update the iterative driver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// Gaussian-mixture update; needs an affine approximate model.
    Mixture,
    /// Importance sampling from the prior.
    Importance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModelKind {
    Conventional,
    Enhanced { sample_size: usize },
    IterativeLinear { max_iters: usize },
    IterativeParticle { max_iters: usize, particles: usize, update: UpdateKind },
}

impl ErrorModelKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorModelKind::Enhanced { sample_size } if *sample_size < 2 => Err(Error::InvalidConfig(
                format!("enhanced error model needs at least 2 samples, got {sample_size}"),
            )),
            ErrorModelKind::IterativeLinear { max_iters: 0 }
            | ErrorModelKind::IterativeParticle { max_iters: 0, .. } => {
                Err(Error::InvalidConfig("iteration count must be at least 1".into()))
            }
            ErrorModelKind::IterativeParticle { particles: 0, .. } => {
                Err(Error::InvalidConfig("particle count must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ErrorModelKind::Conventional => "conventional",
            ErrorModelKind::Enhanced { .. } => "enhanced",
            ErrorModelKind::IterativeLinear { .. } => "iterative-linear",
            ErrorModelKind::IterativeParticle { .. } => "iterative-particle",
        }
    }
}

/// Gaussian fit `N(m̄, Σ)` of a model-error sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_size: usize,
}

impl ModelErrorFit {
    /// Sample mean and the unbiased `1/(n−1)` sample covariance.
    pub fn from_sample(errors: &[DVector<f64>]) -> Result<Self> {
        let n = errors.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 model errors, got {n}")));
        }
        let j = errors[0].len();
        let mut mean = DVector::zeros(j);
        for e in errors {
            mean += e;
        }
        mean /= n as f64;
        let mut covariance = DMatrix::zeros(j, j);
        for e in errors {
            let c = e - &mean;
            covariance.ger(1.0, &c, &c, 1.0);
        }
        covariance /= (n - 1) as f64;
        linalg::symmetrize(&mut covariance);
        Ok(Self {
            mean,
            covariance,
            sample_size: n,
        })
    }

    /// Exact pushforward moments `(Mm, MCMᵀ)` of a Gaussian through a linear `M`.
    pub fn exact_linear(m: &DMatrix<f64>, measure: &GaussianMeasure) -> Self {
        let mut covariance = m * measure.covariance() * m.transpose();
        linalg::symmetrize(&mut covariance);
        Self {
            mean: m * measure.mean(),
            covariance,
            sample_size: 0,
        }
    }
}

/// Per-generation diagnostics of a particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Mean of the generation's measure: the exact mixture mean under the mixture update,
    /// the weighted ensemble mean otherwise.
    pub mean: DVector<f64>,
    /// Weighted average of the particles.
    pub ensemble_mean: DVector<f64>,
    pub marginal_variance: DVector<f64>,
    pub ess: f64,
    /// `ΔD_KL` against the last generation whose accurate outputs were evaluated.
    pub delta_kl: Option<Estimate>,
    pub truth_error: Option<f64>,
}

/// Diagnostics of a particle run, `ℓ = 0…L`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleTrace {
    pub generations: Vec<GenerationRecord>,
    pub warnings: Vec<String>,
}

impl ParticleTrace {
    /// CSV with columns `iter, truth_err, ess, delta_kl, delta_kl_se`; missing values empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,truth_err,ess,delta_kl,delta_kl_se")?;
        for g in &self.generations {
            let te = g.truth_error.map(fmt_f64).unwrap_or_default();
            let (kl, se) = g
                .delta_kl
                .map(|e| (fmt_f64(e.value), fmt_f64(e.std_error)))
                .unwrap_or_default();
            writeln!(out, "{},{te},{},{kl},{se}", g.generation, fmt_f64(g.ess))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum ResultTrace {
    /// One-shot update.
    Single,
    /// Gaussian iteration. The trace's own error columns hold distances to the final
    /// iterate; the reference columns hold distances to a supplied posterior.
    Gaussian {
        trace: IterationTrace,
        reference_mean_errors: Vec<f64>,
        reference_cov_errors: Vec<f64>,
    },
    Particle(ParticleTrace),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata {
    pub seed: Option<u64>,
    pub accurate_calls: usize,
    pub approximate_calls: usize,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: ErrorModelKind,
    pub estimate: DVector<f64>,
    /// Posterior covariance, for Gaussian paths.
    pub covariance: Option<DMatrix<f64>>,
    pub trace: ResultTrace,
    /// `‖estimate_ℓ − u†‖` per iteration; empty until [`ExperimentResult::set_truth`].
    pub truth_error: Vec<f64>,
    pub model_error_fit: Option<ModelErrorFit>,
    pub metadata: RunMetadata,
}

impl ExperimentResult {
    /// Point estimates in iteration order (a single entry for one-shot methods).
    pub fn estimate_history(&self) -> Vec<&DVector<f64>> {
        match &self.trace {
            ResultTrace::Single => vec![&self.estimate],
            ResultTrace::Gaussian { trace, .. } => trace.means.iter().collect(),
            ResultTrace::Particle(p) => p.generations.iter().map(|g| &g.mean).collect(),
        }
    }

    /// Fills `truth_error` (and the particle trace's column) from the estimate history.
    pub fn set_truth(&mut self, truth: &DVector<f64>) -> Result<()> {
        if truth.len() != self.estimate.len() {
            return Err(Error::DimensionMismatch(format!(
                "truth has length {}, estimate {}",
                truth.len(),
                self.estimate.len()
            )));
        }
        self.truth_error = self.estimate_history().iter().map(|m| (*m - truth).norm()).collect();
        if let ResultTrace::Particle(p) = &mut self.trace {
            for (g, e) in p.generations.iter_mut().zip(&self.truth_error) {
                g.truth_error = Some(*e);
            }
        }
        Ok(())
    }

    /// Final truth error, when a truth has been set.
    pub fn final_truth_error(&self) -> Option<f64> {
        self.truth_error.last().copied()
    }
}

fn affine_of<P: ForwardModelPair + ?Sized>(pair: &P) -> Result<AffineMap> {
    pair.approximate_affine().ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no affine approximate model", pair.label()))
    })
}

fn check_data(prior: &GaussianMeasure, gamma: &DMatrix<f64>, b: &DVector<f64>, j: usize, d: usize) -> Result<()> {
    if prior.dim() != d || gamma.shape() != (j, j) || b.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "prior {}, noise {:?}, data {} against parameters {d} and data {j}",
            prior.dim(),
            gamma.shape(),
            b.len()
        )));
    }
    Ok(())
}

/// Single Gaussian update with the approximate model and no model-error term.
pub fn run_conventional<P: ForwardModelPair + ?Sized>(
    pair: &P,
    prior: &GaussianMeasure,
    gamma: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<ExperimentResult> {
    check_data(prior, gamma, b, pair.data_dim(), pair.param_dim())?;
    let f = affine_of(pair)?;
    let post = PriorProducts::new(prior, &f.matrix)?.update(prior, gamma, &f.offset, b)?;
    Ok(ExperimentResult {
        kind: ErrorModelKind::Conventional,
        estimate: post.mean().clone(),
        covariance: Some(post.covariance().clone()),
        trace: ResultTrace::Single,
        truth_error: Vec::new(),
        model_error_fit: None,
        metadata: RunMetadata {
            label: pair.label(),
            ..RunMetadata::default()
        },
    })
}

/// Gaussian update with noise `Γ + Σ` and data shift `m̄` from a given model-error fit.
pub fn run_enhanced_with_fit<P: ForwardModelPair + ?Sized>(
    pair: &P,
    prior: &GaussianMeasure,
    gamma: &DMatrix<f64>,
    b: &DVector<f64>,
    fit: ModelErrorFit,
) -> Result<ExperimentResult> {
    check_data(prior, gamma, b, pair.data_dim(), pair.param_dim())?;
    if fit.mean.len() != pair.data_dim() {
        return Err(Error::DimensionMismatch("model-error fit dimension".into()));
    }
    let f = affine_of(pair)?;
    let mut noise = gamma + &fit.covariance;
    linalg::symmetrize(&mut noise);
    let shift = &f.offset + &fit.mean;
    let post = PriorProducts::new(prior, &f.matrix)?.update(prior, &noise, &shift, b)?;
    Ok(ExperimentResult {
        kind: ErrorModelKind::Enhanced {
            sample_size: fit.sample_size,
        },
        estimate: post.mean().clone(),
        covariance: Some(post.covariance().clone()),
        trace: ResultTrace::Single,
        truth_error: Vec::new(),
        model_error_fit: Some(fit),
        metadata: RunMetadata {
            label: pair.label(),
            ..RunMetadata::default()
        },
    })
}

/// Enhanced error model: `n_err` prior draws pushed through `M`, fitted by a Gaussian.
///
/// Draws use the `ModelErrorFit` purpose so they are independent of particle streams.
pub fn run_enhanced<P: ForwardModelPair + ?Sized>(
    pair: &P,
    prior: &GaussianMeasure,
    gamma: &DMatrix<f64>,
    b: &DVector<f64>,
    n_err: usize,
    rng: &RngSpec,
) -> Result<ExperimentResult> {
    ErrorModelKind::Enhanced { sample_size: n_err }.validate()?;
    let counted = CountingPair::new(pair);
    let draws = sample_prior(prior, n_err, &rng.child(Purpose::ModelErrorFit as u64))?;
    let me = model_error_sample(&draws, &counted)?;
    let fit = ModelErrorFit::from_sample(me.errors())?;
    let mut result = run_enhanced_with_fit(pair, prior, gamma, b, fit)?;
    result.metadata.seed = Some(rng.master_seed);
    result.metadata.accurate_calls = counted.accurate_calls();
    result.metadata.approximate_calls = counted.approximate_calls();
    Ok(result)
}

/// The exact linear-Gaussian iteration for `max_iters` steps.
///
/// The trace's error columns are distances to the final iterate (for slope fitting);
/// when `reference` is given the distances to it are stored alongside.
pub fn run_iterative_linear(
    model: &LinearModelPair,
    b: &DVector<f64>,
    max_iters: usize,
    reference: Option<&GaussianMeasure>,
) -> Result<ExperimentResult> {
    ErrorModelKind::IterativeLinear { max_iters }.validate()?;
    let mut trace = run_linear_iteration_against(model, b, max_iters, DEFAULT_TOL, reference)?;
    let reference_mean_errors = std::mem::take(&mut trace.mean_errors);
    let reference_cov_errors = std::mem::take(&mut trace.cov_errors);
    trace.set_errors_against_limit()?;
    Ok(ExperimentResult {
        kind: ErrorModelKind::IterativeLinear { max_iters },
        estimate: trace.final_mean().clone(),
        covariance: trace.final_covariance().cloned(),
        trace: ResultTrace::Gaussian {
            trace,
            reference_mean_errors,
            reference_cov_errors,
        },
        truth_error: Vec::new(),
        model_error_fit: None,
        metadata: RunMetadata {
            label: "linear model pair".into(),
            ..RunMetadata::default()
        },
    })
}

/// Options of the particle driver beyond the defaults.
#[derive(Debug, Clone, Default)]
pub struct ParticleOptions {
    pub index_rule: IndexRule,
    /// Noise density for importance weights; defaults to the exact Gaussian with `Γ`.
    pub noise: Option<BoundedNoiseDensity>,
    /// Skip the KL diagnostic.
    pub skip_kl: bool,
}

/// ESS fraction below which an importance step is flagged.
pub const ESS_WARNING_FRACTION: f64 = 0.01;

/// Particle version of the iteration: `L` rounds of model-error sampling and update.
///
/// Exactly `L·N` accurate evaluations are made (one per particle of generations
/// `0…L−1`); their outputs are reused for the KL diagnostic, which is therefore
/// available for generations `0…L−1`.
#[allow(clippy::too_many_arguments)]
pub fn run_iterative_particle<P: ForwardModelPair + ?Sized>(
    pair: &P,
    prior: &GaussianMeasure,
    gamma: &DMatrix<f64>,
    b: &DVector<f64>,
    max_iters: usize,
    n_particles: usize,
    rng: &RngSpec,
    update: UpdateKind,
    options: &ParticleOptions,
) -> Result<ExperimentResult> {
    let kind = ErrorModelKind::IterativeParticle {
        max_iters,
        particles: n_particles,
        update,
    };
    kind.validate()?;
    check_data(prior, gamma, b, pair.data_dim(), pair.param_dim())?;
    let counted = CountingPair::new(pair);
    let kl_noise = BoundedNoiseDensity::gaussian(gamma.clone())?;
    let weight_noise = options.noise.clone().unwrap_or_else(|| kl_noise.clone());
    let mixture = match update {
        UpdateKind::Mixture => Some(GaussianConditional::new(prior, &affine_of(pair)?, gamma, b)?),
        UpdateKind::Importance => None,
    };

    let mut ensemble = sample_prior(prior, n_particles, rng)?;
    let mut trace = ParticleTrace::default();
    let mut records: Vec<LikelihoodRecord> = Vec::new();
    let mut previous: Option<(Vec<f64>, ModelErrorSample)> = None;
    let mut exact_mean = mixture.is_some().then(|| prior.mean().clone());
    for _ in 0..max_iters {
        let me = model_error_sample(&ensemble, &counted)?;
        if !options.skip_kl {
            let prev = previous.as_ref().map(|(w, m)| (w.as_slice(), m));
            records.push(likelihood_record(&ensemble, &me, prev, &kl_noise, b)?);
        }
        let (next, next_mean) = match &mixture {
            Some(inner) => (
                resample_draw_update(&ensemble, &me, inner, rng, options.index_rule)?,
                Some(mixture_mean(&ensemble, &me, inner, options.index_rule)?),
            ),
            None => (
                importance_update_with(&ensemble, &me, &counted, &weight_noise, prior, b, rng)?,
                None,
            ),
        };
        trace.generations.push(generation_record(&ensemble, exact_mean.take()));
        exact_mean = next_mean;
        previous = Some((ensemble.weights().to_vec(), me));
        ensemble = next;
        let ess = effective_sample_size(ensemble.weights());
        if ess < ESS_WARNING_FRACTION * n_particles as f64 {
            trace.warnings.push(format!(
                "generation {}: effective sample size {ess:.2} below {:.0}% of {n_particles}",
                ensemble.generation(),
                100.0 * ESS_WARNING_FRACTION
            ));
        }
    }
    trace.generations.push(generation_record(&ensemble, exact_mean));
    if !options.skip_kl {
        for (g, e) in trace.generations.iter_mut().zip(kl_divergence_delta(&records)?) {
            g.delta_kl = Some(e);
        }
    }
    let estimate = trace.generations.last().expect("at least the prior").mean.clone();
    Ok(ExperimentResult {
        kind,
        estimate,
        covariance: None,
        trace: ResultTrace::Particle(trace),
        truth_error: Vec::new(),
        model_error_fit: None,
        metadata: RunMetadata {
            seed: Some(rng.master_seed),
            accurate_calls: counted.accurate_calls(),
            approximate_calls: counted.approximate_calls(),
            label: pair.label(),
        },
    })
}

fn generation_record(ensemble: &ParticleEnsemble, exact_mean: Option<DVector<f64>>) -> GenerationRecord {
    let (ensemble_mean, marginal_variance) = ensemble_moments(ensemble);
    GenerationRecord {
        generation: ensemble.generation(),
        mean: exact_mean.unwrap_or_else(|| ensemble_mean.clone()),
        ensemble_mean,
        marginal_variance,
        ess: effective_sample_size(ensemble.weights()),
        delta_kl: None,
        truth_error: None,
    }
}
