use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ensemble::{normalize_log_weights, ModelErrorSample, ParticleEnsemble};
use super::noise::BoundedNoiseDensity;
use super::rng::{standard_normal_vector, Purpose, RngSpec};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceRoot, GaussianMeasure};
use crate::linalg::{self, SpdFactor, CONDITION_LIMIT};
use crate::models::{AffineMap, ForwardModelPair};

/// Proposals allowed per particle before a rejection sampler gives up.
pub const MAX_PROPOSALS: usize = 1_000_000;

/// `N` independent prior draws with weights `1/N`, generation 0.
///
/// Particle `j` uses the stream `(Prior, 0, j)`.
pub fn sample_prior(prior: &GaussianMeasure, n: usize, rng: &RngSpec) -> Result<ParticleEnsemble> {
    let particles = prior_draws(prior, n, 0, rng)?;
    ParticleEnsemble::uniform(particles, 0)
}

fn prior_draws(
    prior: &GaussianMeasure,
    n: usize,
    generation: usize,
    rng: &RngSpec,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("particle count must be at least 1".into()));
    }
    let root = prior.root()?;
    let d = prior.dim();
    Ok((0..n)
        .into_par_iter()
        .map(|j| {
            let mut stream = rng.stream(Purpose::Prior, generation as u64, j as u64);
            prior.mean() + root.apply(&standard_normal_vector(&mut stream, d))
        })
        .collect())
}

/// `M(u_j) = F(u_j) − f(u_j)` for every particle, keeping `F(u_j)` for later diagnostics.
pub fn model_error_sample<P: ForwardModelPair + ?Sized>(
    ensemble: &ParticleEnsemble,
    fm: &P,
) -> Result<ModelErrorSample> {
    if ensemble.dim() != fm.param_dim() {
        return Err(Error::DimensionMismatch(format!(
            "particles have length {}, model expects {}",
            ensemble.dim(),
            fm.param_dim()
        )));
    }
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = ensemble
        .particles()
        .par_iter()
        .enumerate()
        .map(|(j, u)| {
            let wrap = |e: Error| Error::ParticleEvaluation {
                index: j,
                source: Box::new(e),
            };
            let accurate = fm.accurate(u).map_err(wrap)?;
            let approx = fm.approximate(u).map_err(wrap)?;
            Ok((&accurate - approx, accurate))
        })
        .collect::<Result<_>>()?;
    let (errors, accurate) = pairs.into_iter().unzip();
    ModelErrorSample::new(errors, accurate, ensemble.generation())
}

/// How the mixture component `k_j` is chosen for each new particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexRule {
    /// Probability `∝ w_k Z_k`, where `Z_k` is the evidence of component `k`.
    /// The new ensemble then samples the normalized mixture exactly.
    #[default]
    EvidenceWeighted,
    /// Probability `∝ w_k`, ignoring component evidence.
    EnsembleWeights,
}

/// Draws from `π_prior(u) π_noise(b − f(u) − m)` for a fixed model-error value `m`.
pub trait InnerSampler: Sync {
    /// `log ∫ π_prior(u) π_noise(b − f(u) − m) du` up to an `m`-independent constant,
    /// when it is available in closed form.
    fn log_evidence(&self, m: &DVector<f64>) -> Option<f64>;

    /// One proposal; `None` means it was rejected.
    fn propose(&self, m: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<Option<DVector<f64>>>;
}

/// Exact conditional draws for an affine `f(u) = c + Au`, Gaussian prior and Gaussian noise.
///
/// A draw is `u = m₀ + z + K(b − c − m − A(m₀ + z) − η)` with `z ~ N(0, C₀)`, `η ~ N(0, Γ)`
/// and `K = C₀Aᵀ(Γ + AC₀Aᵀ)⁻¹`, which has law `N(p(m), (AᵀΓ⁻¹A + C₀⁻¹)⁻¹)`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    prior_mean: DVector<f64>,
    prior_root: Arc<CovarianceRoot>,
    a: DMatrix<f64>,
    gain: DMatrix<f64>,
    a_c0: DMatrix<f64>,
    innovation: SpdFactor,
    noise_root: DMatrix<f64>,
    /// `b − c − A m₀`.
    base: DVector<f64>,
}

impl GaussianConditional {
    pub fn new(
        prior: &GaussianMeasure,
        f: &AffineMap,
        gamma: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Result<Self> {
        let a = &f.matrix;
        let j = a.nrows();
        if a.ncols() != prior.dim() || gamma.shape() != (j, j) || b.len() != j || f.offset.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{}, prior {}, noise {:?}, data {}, offset {}",
                j,
                a.ncols(),
                prior.dim(),
                gamma.shape(),
                b.len(),
                f.offset.len()
            )));
        }
        let a_c0 = a * prior.covariance();
        let mut s = gamma + &a_c0 * a.transpose();
        linalg::symmetrize(&mut s);
        let innovation = SpdFactor::new(&s, CONDITION_LIMIT, "innovation matrix")?;
        let gain = innovation.solve(&a_c0).transpose();
        let noise_root = linalg::psd_root(gamma, "noise covariance")?;
        let base = b - &f.offset - a * prior.mean();
        Ok(Self {
            prior_mean: prior.mean().clone(),
            prior_root: prior.root()?,
            a: a.clone(),
            gain,
            a_c0,
            innovation,
            noise_root,
            base,
        })
    }

    /// Component mean `p(m) = m₀ + K(b − c − m − Am₀)`.
    pub fn component_mean(&self, m: &DVector<f64>) -> DVector<f64> {
        &self.prior_mean + &self.gain * (&self.base - m)
    }

    /// Component covariance `C₀ − K A C₀`, shared by all components.
    pub fn component_covariance(&self, prior: &GaussianMeasure) -> DMatrix<f64> {
        let mut c = prior.covariance() - &self.gain * &self.a_c0;
        linalg::symmetrize(&mut c);
        c
    }
}

impl InnerSampler for GaussianConditional {
    fn log_evidence(&self, m: &DVector<f64>) -> Option<f64> {
        let r = &self.base - m;
        Some(-0.5 * r.dot(&self.innovation.solve_vec(&r)))
    }

    fn propose(&self, m: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<Option<DVector<f64>>> {
        let d = self.prior_mean.len();
        let z = self.prior_root.apply(&standard_normal_vector(rng, d));
        let eta = &self.noise_root * standard_normal_vector(rng, self.base.len());
        let residual = &self.base - m - &self.a * &z - eta;
        Ok(Some(&self.prior_mean + z + &self.gain * residual))
    }
}

/// Prior proposals accepted with probability `π_noise(b − f(u) − m) / sup π_noise`.
pub struct PriorRejectionSampler<'a, F> {
    prior_mean: DVector<f64>,
    prior_root: Arc<CovarianceRoot>,
    f: F,
    noise: &'a BoundedNoiseDensity,
    b: DVector<f64>,
}

impl<'a, F> PriorRejectionSampler<'a, F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    pub fn new(prior: &GaussianMeasure, f: F, noise: &'a BoundedNoiseDensity, b: DVector<f64>) -> Result<Self> {
        if b.len() != noise.dim() {
            return Err(Error::DimensionMismatch(format!(
                "data has length {}, noise dimension {}",
                b.len(),
                noise.dim()
            )));
        }
        Ok(Self {
            prior_mean: prior.mean().clone(),
            prior_root: prior.root()?,
            f,
            noise,
            b,
        })
    }
}

impl<F> InnerSampler for PriorRejectionSampler<'_, F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    fn log_evidence(&self, _m: &DVector<f64>) -> Option<f64> {
        None
    }

    fn propose(&self, m: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<Option<DVector<f64>>> {
        let d = self.prior_mean.len();
        let u = &self.prior_mean + self.prior_root.apply(&standard_normal_vector(rng, d));
        let residual = &self.b - (self.f)(&u)? - m;
        let log_accept = self.noise.log_density(&residual) - self.noise.log_sup();
        let draw: f64 = rng.random();
        Ok((draw.ln() < log_accept).then_some(u))
    }
}

/// Systematic resampling: `n` indices from `probs` using the single offset `u0 ∈ [0, 1)`.
pub fn systematic_resample(probs: &[f64], n: usize, u0: f64) -> Vec<usize> {
    let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let mut cum = probs.first().copied().unwrap_or(0.0);
    let mut k = 0;
    for i in 0..n {
        let pos = (i as f64 + u0) / n as f64;
        while pos >= cum && k < last {
            k += 1;
            cum += probs[k];
        }
        out.push(k);
    }
    out
}

fn categorical(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|c| *c <= target).min(cdf.len() - 1)
}

/// One step of the resample-then-draw scheme.
///
/// Every new particle picks a component `k_j` (see [`IndexRule`]) and is then drawn
/// from `π_prior(u) π_noise(b − f(u) − m_k)` by `inner`. When the sampler has no
/// closed-form evidence the evidence-weighted rule is realized by redrawing the index
/// after every rejection. Particle `j` uses stream `(Draw, ℓ+1, j)`; the resampling
/// offset uses `(Resample, ℓ+1, 0)`. The output is unweighted.
pub fn resample_draw_update<S: InnerSampler + ?Sized>(
    ensemble: &ParticleEnsemble,
    me: &ModelErrorSample,
    inner: &S,
    rng: &RngSpec,
    rule: IndexRule,
) -> Result<ParticleEnsemble> {
    me.check_aligned(ensemble)?;
    let n = ensemble.len();
    let generation = ensemble.generation() + 1;
    let weights = ensemble.weights();
    let evidence: Option<Vec<f64>> = match rule {
        IndexRule::EvidenceWeighted => me.errors().iter().map(|m| inner.log_evidence(m)).collect(),
        IndexRule::EnsembleWeights => None,
    };
    let joint = rule == IndexRule::EvidenceWeighted && evidence.is_none();
    let indices = if joint {
        None
    } else {
        let log_w: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(k, w)| w.ln() + evidence.as_ref().map_or(0.0, |e| e[k]))
            .collect();
        let probs = normalize_log_weights(&log_w).ok_or(Error::DegenerateLikelihood)?;
        let u0: f64 = rng.stream(Purpose::Resample, generation as u64, 0).random();
        Some(systematic_resample(&probs, n, u0))
    };
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let particles = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut stream = rng.stream(Purpose::Draw, generation as u64, j as u64);
            for _ in 0..MAX_PROPOSALS {
                let k = match &indices {
                    Some(ix) => ix[j],
                    None => categorical(&cdf, stream.random()),
                };
                let proposal = inner.propose(&me.errors()[k], &mut stream).map_err(|e| {
                    Error::ParticleEvaluation {
                        index: j,
                        source: Box::new(e),
                    }
                })?;
                if let Some(u) = proposal {
                    return Ok(u);
                }
            }
            Err(Error::ParticleEvaluation {
                index: j,
                source: Box::new(Error::SolverBreakdown(format!(
                    "inner sampler rejected {MAX_PROPOSALS} proposals"
                ))),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ParticleEnsemble::uniform(particles, generation)
}

/// Exact mean `Σ_k p_k p(m_k)` of the mixture that [`resample_draw_update`] samples with
/// a [`GaussianConditional`], where `p_k ∝ w_k Z_k` (or `w_k` under [`IndexRule::EnsembleWeights`]).
///
/// The component covariance is shared, so this is the mean of the next generation's
/// measure without the sampling noise of the draws.
pub fn mixture_mean(
    ensemble: &ParticleEnsemble,
    me: &ModelErrorSample,
    inner: &GaussianConditional,
    rule: IndexRule,
) -> Result<DVector<f64>> {
    me.check_aligned(ensemble)?;
    let log_w: Vec<f64> = ensemble
        .weights()
        .iter()
        .zip(me.errors())
        .map(|(w, m)| match rule {
            IndexRule::EvidenceWeighted => w.ln() + inner.log_evidence(m).unwrap_or(0.0),
            IndexRule::EnsembleWeights => w.ln(),
        })
        .collect();
    let probs = normalize_log_weights(&log_w).ok_or(Error::DegenerateLikelihood)?;
    let mut mean = DVector::zeros(ensemble.dim());
    for (p, m) in probs.iter().zip(me.errors()) {
        if *p > 0.0 {
            mean.axpy(*p, &inner.component_mean(m), 1.0);
        }
    }
    Ok(mean)
}

/// Gaussian-mixture update for a linear approximate model `f(u) = Au`.
///
/// Equivalent to [`resample_draw_update`] with a [`GaussianConditional`] sampler and the
/// evidence-weighted index rule; the two produce identical ensembles for the same seed.
pub fn mixture_update(
    ensemble: &ParticleEnsemble,
    me: &ModelErrorSample,
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    prior: &GaussianMeasure,
    b: &DVector<f64>,
    rng: &RngSpec,
) -> Result<ParticleEnsemble> {
    let inner = GaussianConditional::new(prior, &AffineMap::linear(a.clone()), gamma, b)?;
    resample_draw_update(ensemble, me, &inner, rng, IndexRule::EvidenceWeighted)
}

/// Importance-sampling update: fresh prior draws weighted by
/// `g(u) = Σ_k w_k π_noise(b − f(u) − M(u_k))`.
pub fn importance_update<P: ForwardModelPair + ?Sized>(
    ensemble: &ParticleEnsemble,
    fm: &P,
    noise: &BoundedNoiseDensity,
    prior: &GaussianMeasure,
    b: &DVector<f64>,
    rng: &RngSpec,
) -> Result<ParticleEnsemble> {
    let me = model_error_sample(ensemble, fm)?;
    importance_update_with(ensemble, &me, fm, noise, prior, b, rng)
}

/// As [`importance_update`] with the current model errors already computed.
///
/// New particle `i` uses stream `(Prior, ℓ+1, i)`; `g` is accumulated in log space.
pub fn importance_update_with<P: ForwardModelPair + ?Sized>(
    ensemble: &ParticleEnsemble,
    me: &ModelErrorSample,
    fm: &P,
    noise: &BoundedNoiseDensity,
    prior: &GaussianMeasure,
    b: &DVector<f64>,
    rng: &RngSpec,
) -> Result<ParticleEnsemble> {
    me.check_aligned(ensemble)?;
    if b.len() != noise.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has length {}, noise dimension {}",
            b.len(),
            noise.dim()
        )));
    }
    let generation = ensemble.generation() + 1;
    let particles = prior_draws(prior, ensemble.len(), generation, rng)?;
    let components: Vec<(f64, DVector<f64>)> = ensemble
        .weights()
        .iter()
        .zip(me.errors())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, m)| (w.ln(), noise.whiten(m)))
        .collect();
    let log_g = particles
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let fu = fm.approximate(u).map_err(|e| Error::ParticleEvaluation {
                index: i,
                source: Box::new(e),
            })?;
            let y = noise.whiten(&(b - fu));
            Ok(log_mixture_likelihood(noise, &y, &components))
        })
        .collect::<Result<Vec<f64>>>()?;
    ParticleEnsemble::from_log_weights(particles, &log_g, generation)
}

/// `log Σ_k exp(log w_k + log π_noise(ε))` for whitened `y = L⁻¹(b − f(u))` and components
/// `(log w_k, L⁻¹m_k)`, accumulated with a running maximum.
pub(crate) fn log_mixture_likelihood(
    noise: &BoundedNoiseDensity,
    y: &DVector<f64>,
    components: &[(f64, DVector<f64>)],
) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (log_w, z) in components {
        let sq: f64 = y.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = log_w + noise.log_density_from_sq(sq);
        if v <= max {
            sum += (v - max).exp();
        } else if v > f64::NEG_INFINITY {
            sum = sum * (max - v).exp() + 1.0;
            max = v;
        }
    }
    if sum == 0.0 {
        f64::NEG_INFINITY
    } else {
        max + sum.ln()
    }
}
