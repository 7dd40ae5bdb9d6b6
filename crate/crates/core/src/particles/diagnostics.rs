use nalgebra::DVector;

use super::ensemble::{ModelErrorSample, ParticleEnsemble};
use super::noise::BoundedNoiseDensity;
use super::updates::log_mixture_likelihood;
use crate::error::{Error, Result};

/// Weighted mean and weighted diagonal second central moment (no Bessel correction).
pub fn ensemble_moments(ensemble: &ParticleEnsemble) -> (DVector<f64>, DVector<f64>) {
    let d = ensemble.dim();
    let mut mean = DVector::zeros(d);
    for (u, w) in ensemble.particles().iter().zip(ensemble.weights()) {
        mean.axpy(*w, u, 1.0);
    }
    let mut var = DVector::zeros(d);
    for (u, w) in ensemble.particles().iter().zip(ensemble.weights()) {
        let c = u - &mean;
        var.axpy(*w, &c.component_mul(&c), 1.0);
    }
    (mean, var)
}

/// `1 / Σ w_j²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Log-likelihoods of one generation's particles under the accurate model and under
/// the likelihood that generation was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRecord {
    pub generation: usize,
    pub weights: Vec<f64>,
    /// `log π_noise(b − F(u_j))`.
    pub log_accurate: Vec<f64>,
    /// `log π_ℓ(b | u_j)`; zero for the prior generation.
    pub log_iterated: Vec<f64>,
}

/// Builds the record for `ensemble` from its cached accurate outputs.
///
/// `previous` holds the weights and model errors of generation `ℓ − 1`; it is `None`
/// for the prior, whose likelihood is constant. The approximate output is recovered as
/// `f(u_j) = F(u_j) − M(u_j)`, so no model is evaluated here.
pub fn likelihood_record(
    ensemble: &ParticleEnsemble,
    current: &ModelErrorSample,
    previous: Option<(&[f64], &ModelErrorSample)>,
    noise: &BoundedNoiseDensity,
    b: &DVector<f64>,
) -> Result<LikelihoodRecord> {
    current.check_aligned(ensemble)?;
    if !current.has_accurate_outputs() {
        return Err(Error::InvalidArgument(
            "model-error sample carries no accurate outputs".into(),
        ));
    }
    let log_accurate: Vec<f64> = current
        .accurate_outputs()
        .iter()
        .map(|fu| noise.log_density(&(b - fu)))
        .collect();
    let log_iterated = match previous {
        None => vec![0.0; ensemble.len()],
        Some((weights, prev)) => {
            if weights.len() != prev.len() {
                return Err(Error::DimensionMismatch(
                    "previous weights and model errors differ in length".into(),
                ));
            }
            let components: Vec<(f64, DVector<f64>)> = weights
                .iter()
                .zip(prev.errors())
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, m)| (w.ln(), noise.whiten(m)))
                .collect();
            current
                .accurate_outputs()
                .iter()
                .zip(current.errors())
                .map(|(fu, m)| {
                    let y = noise.whiten(&(b - (fu - m)));
                    log_mixture_likelihood(noise, &y, &components)
                })
                .collect()
        }
    };
    Ok(LikelihoodRecord {
        generation: ensemble.generation(),
        weights: ensemble.weights().to_vec(),
        log_accurate,
        log_iterated,
    })
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Self-normalized estimate of `D_KL(π_ℓ ‖ π_post)`.
///
/// With `r = π(b|u)/π_ℓ(b|u)`, `D = E_ℓ[−log r] + log E_ℓ[r]`; both expectations use the
/// ensemble weights, so the unknown evidences never appear. The estimator is consistent
/// but biased at finite `N` through the logarithm of a sample mean.
pub fn kl_divergence(record: &LikelihoodRecord) -> Result<Estimate> {
    let n = record.weights.len();
    if record.log_accurate.len() != n || record.log_iterated.len() != n || n == 0 {
        return Err(Error::DimensionMismatch("likelihood record lengths differ".into()));
    }
    let log_r: Vec<f64> = record
        .log_accurate
        .iter()
        .zip(&record.log_iterated)
        .map(|(a, i)| a - i)
        .collect();
    if let Some(j) = log_r.iter().position(|v| !v.is_finite()) {
        return Err(Error::ZeroLikelihood { index: j });
    }
    let w = &record.weights;
    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_r.iter().map(|v| (v - max).exp()).collect();
    let mean_scaled: f64 = w.iter().zip(&scaled).map(|(w, s)| w * s).sum();
    let neg_log: f64 = -w.iter().zip(&log_r).map(|(w, v)| w * v).sum::<f64>();
    let value = neg_log + max + mean_scaled.ln();
    // influence function φ = −log r + r / E[r]
    let phi: Vec<f64> = log_r
        .iter()
        .zip(&scaled)
        .map(|(v, s)| -v + s / mean_scaled)
        .collect();
    let phi_mean: f64 = w.iter().zip(&phi).map(|(w, p)| w * p).sum();
    let var: f64 = w.iter().zip(&phi).map(|(w, p)| w * (p - phi_mean).powi(2)).sum();
    let std_error = (var / effective_sample_size(w)).sqrt();
    Ok(Estimate { value, std_error })
}

/// `ΔD_KL(ℓ) = D_KL(π_ℓ‖π_post) − D_KL(π_last‖π_post)` for every record, last one included.
///
/// Standard errors add the two estimates' errors in quadrature.
pub fn kl_divergence_delta(records: &[LikelihoodRecord]) -> Result<Vec<Estimate>> {
    let estimates = records.iter().map(kl_divergence).collect::<Result<Vec<_>>>()?;
    let last = match estimates.last() {
        Some(e) => *e,
        None => return Ok(Vec::new()),
    };
    let n = estimates.len();
    Ok(estimates
        .into_iter()
        .enumerate()
        .map(|(l, e)| {
            if l + 1 == n {
                Estimate {
                    value: 0.0,
                    std_error: 0.0,
                }
            } else {
                Estimate {
                    value: e.value - last.value,
                    std_error: e.std_error.hypot(last.std_error),
                }
            }
        })
        .collect())
}

/// A bounded test function for operator distances.
pub type TestFunction = dyn Fn(&DVector<f64>) -> f64 + Sync;

/// `max_φ (1/R) Σ_r |μ_r(φ) − ν(φ)|²` over the dictionary, square-rooted.
///
/// `reference` plays the role of the exact measure (for example quadrature atoms) and
/// `replicates` are independent particle approximations of it.
pub fn empirical_operator_distance(
    reference: &ParticleEnsemble,
    replicates: &[ParticleEnsemble],
    test_functions: &[&TestFunction],
) -> f64 {
    if replicates.is_empty() {
        return 0.0;
    }
    test_functions
        .iter()
        .map(|phi| {
            let exact = reference.expectation(*phi);
            replicates
                .iter()
                .map(|e| (e.expectation(*phi) - exact).powi(2))
                .sum::<f64>()
                / replicates.len() as f64
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// A measure on a uniform 1D grid, for quadrature references in one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridMeasure1D {
    /// Normalized `density` (given as a log density) on `n` equally spaced nodes of `[lo, hi]`.
    pub fn from_log_density<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, log_density: F) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("grid [{lo}, {hi}] with {n} nodes")));
        }
        let nodes: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let logs: Vec<f64> = nodes.iter().map(|x| log_density(*x)).collect();
        let weights =
            super::ensemble::normalize_log_weights(&logs).ok_or(Error::DegenerateLikelihood)?;
        Ok(Self { nodes, weights })
    }

    /// `μ_{ℓ+1}(u) ∝ π_prior(u) Σ_k μ_ℓ(k) π_noise(b − f(u) − M(u_k))` on the same nodes.
    pub fn iterate<P, F, M>(&self, log_prior: P, approx: F, model_error: M, noise: &BoundedNoiseDensity, b: f64) -> Result<Self>
    where
        P: Fn(f64) -> f64,
        F: Fn(f64) -> f64,
        M: Fn(f64) -> f64,
    {
        let components: Vec<(f64, DVector<f64>)> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(x, w)| (w.ln(), noise.whiten(&DVector::from_element(1, model_error(*x)))))
            .collect();
        let logs: Vec<f64> = self
            .nodes
            .iter()
            .map(|x| {
                let y = noise.whiten(&DVector::from_element(1, b - approx(*x)));
                log_prior(*x) + log_mixture_likelihood(noise, &y, &components)
            })
            .collect();
        let weights =
            super::ensemble::normalize_log_weights(&logs).ok_or(Error::DegenerateLikelihood)?;
        Ok(Self {
            nodes: self.nodes.clone(),
            weights,
        })
    }

    pub fn expectation<F: Fn(f64) -> f64 + ?Sized>(&self, phi: &F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * phi(*x)).sum()
    }

    /// The grid as a weighted ensemble of one-dimensional atoms.
    pub fn to_ensemble(&self, generation: usize) -> Result<ParticleEnsemble> {
        let total: f64 = self.weights.iter().sum();
        ParticleEnsemble::new(
            self.nodes.iter().map(|x| DVector::from_element(1, *x)).collect(),
            self.weights.iter().map(|w| w / total).collect(),
            generation,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_moments() {
        let e = ParticleEnsemble::uniform(
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            0,
        )
        .unwrap();
        let (m, v) = ensemble_moments(&e);
        assert_eq!(m[0], 0.0);
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn ess_values() {
        assert!((effective_sample_size(&[0.01; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn identical_likelihoods_have_zero_divergence() {
        let rec = LikelihoodRecord {
            generation: 1,
            weights: vec![0.25; 4],
            log_accurate: vec![-3.0, -1.0, 2.0, 0.5],
            log_iterated: vec![-3.0, -1.0, 2.0, 0.5],
        };
        let est = kl_divergence(&rec).unwrap();
        assert!(est.value.abs() < 1e-14);
        assert_eq!(kl_divergence_delta(&[rec]).unwrap()[0].value, 0.0);
    }

    #[test]
    fn divergence_is_nonnegative() {
        let rec = LikelihoodRecord {
            generation: 0,
            weights: vec![0.2; 5],
            log_accurate: vec![-30.0, -1.0, 2.0, 0.5, -700.0],
            log_iterated: vec![0.0; 5],
        };
        assert!(kl_divergence(&rec).unwrap().value >= 0.0);
    }

    #[test]
    fn distance_to_itself_is_zero() {
        let e = ParticleEnsemble::uniform(vec![DVector::from_element(1, 0.3); 3], 0).unwrap();
        let phi: &TestFunction = &|u: &DVector<f64>| u[0].cos();
        assert_eq!(empirical_operator_distance(&e, &[e.clone(), e.clone()], &[phi]), 0.0);
    }
}
