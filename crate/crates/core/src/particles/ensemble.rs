use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gaussian::fmt_f64;

/// Tolerance on `Σ w_j = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `N` weighted parameter vectors of equal length, tagged with the iteration index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<DVector<f64>>,
    weights: Vec<f64>,
    generation: usize,
}

impl ParticleEnsemble {
    /// Validates lengths, nonnegativity and `|Σw − 1| ≤ 1e-12`.
    pub fn new(particles: Vec<DVector<f64>>, weights: Vec<f64>, generation: usize) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if weights.len() != particles.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} particles but {} weights",
                particles.len(),
                weights.len()
            )));
        }
        let d = particles[0].len();
        if let Some(j) = particles.iter().position(|p| p.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "particle {j} has length {}, expected {d}",
                particles[j].len()
            )));
        }
        if let Some(j) = weights.iter().position(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("weight {j} is {}", weights[j])));
        }
        let sum = compensated_sum(&weights);
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}")));
        }
        Ok(Self {
            particles,
            weights,
            generation,
        })
    }

    /// Equal weights `1/N`.
    pub fn uniform(particles: Vec<DVector<f64>>, generation: usize) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0 / n.max(1) as f64; n], generation)
    }

    /// Weights proportional to `exp(log_weights)`, normalized in log space.
    pub fn from_log_weights(
        particles: Vec<DVector<f64>>,
        log_weights: &[f64],
        generation: usize,
    ) -> Result<Self> {
        let weights = normalize_log_weights(log_weights).ok_or(Error::DegenerateLikelihood)?;
        Self::new(particles, weights, generation)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// `Σ w_j φ(u_j)`.
    pub fn expectation<F: Fn(&DVector<f64>) -> f64 + ?Sized>(&self, phi: &F) -> f64 {
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| w * phi(u))
            .sum()
    }

    /// CSV with columns `particle_index, weight, u_1 … u_d`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("u_{i}")).collect();
        writeln!(out, "particle_index,weight,{}", header.join(","))?;
        for (j, (u, w)) in self.particles.iter().zip(&self.weights).enumerate() {
            let row: Vec<String> = u.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{j},{},{}", fmt_f64(*w), row.join(","))?;
        }
        Ok(())
    }
}

/// Neumaier summation; the error does not grow with the number of terms.
fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Softmax of `log_weights`; `None` when every entry is `−∞` or any is NaN.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|v| v.is_nan()) {
        return None;
    }
    let exps: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
    let total = compensated_sum(&exps);
    Some(exps.into_iter().map(|e| e / total).collect())
}

/// `log Σ exp(values)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Model errors `M(u_j) = F(u_j) − f(u_j)` of one ensemble, with the accurate outputs kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorSample {
    errors: Vec<DVector<f64>>,
    accurate: Vec<DVector<f64>>,
    source_generation: usize,
}

impl ModelErrorSample {
    /// `accurate[j]` is `F(u_j)` and `errors[j]` is `F(u_j) − f(u_j)`.
    pub fn new(
        errors: Vec<DVector<f64>>,
        accurate: Vec<DVector<f64>>,
        source_generation: usize,
    ) -> Result<Self> {
        if errors.len() != accurate.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} errors but {} accurate outputs",
                errors.len(),
                accurate.len()
            )));
        }
        Ok(Self {
            errors,
            accurate,
            source_generation,
        })
    }

    /// A sample from known errors only; the accurate outputs are left empty vectors.
    pub fn from_errors(errors: Vec<DVector<f64>>, source_generation: usize) -> Self {
        let accurate = vec![DVector::zeros(0); errors.len()];
        Self {
            errors,
            accurate,
            source_generation,
        }
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn errors(&self) -> &[DVector<f64>] {
        &self.errors
    }

    /// Cached `F(u_j)`, keyed by particle index within `source_generation`.
    pub fn accurate_outputs(&self) -> &[DVector<f64>] {
        &self.accurate
    }

    pub fn has_accurate_outputs(&self) -> bool {
        self.accurate.iter().all(|a| a.len() == self.errors.first().map_or(0, |e| e.len()))
            && !self.errors.is_empty()
    }

    pub fn source_generation(&self) -> usize {
        self.source_generation
    }

    pub(crate) fn check_aligned(&self, ensemble: &ParticleEnsemble) -> Result<()> {
        if self.len() != ensemble.len() {
            return Err(Error::DimensionMismatch(format!(
                "model-error sample has {} entries, ensemble has {}",
                self.len(),
                ensemble.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_weights() {
        let p = vec![DVector::zeros(1); 2];
        assert!(ParticleEnsemble::new(p.clone(), vec![0.5, 0.6], 0).is_err());
        assert!(ParticleEnsemble::new(p.clone(), vec![1.5, -0.5], 0).is_err());
        assert!(ParticleEnsemble::new(p, vec![0.25, 0.75], 0).is_ok());
    }

    #[test]
    fn log_weights_survive_underflow() {
        let w = normalize_log_weights(&[-1e3, -1e3 + 2f64.ln()]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.1, -2.0, 3.5];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let e = ParticleEnsemble::uniform(vec![DVector::from_vec(vec![1.0, 2.0])], 3).unwrap();
        let mut out = Vec::new();
        e.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("particle_index,weight,u_1,u_2"));
        assert!(lines.next().unwrap().starts_with("0,1.0000000000000000e0,"));
    }
}
