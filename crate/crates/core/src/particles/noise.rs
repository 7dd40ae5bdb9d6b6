use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    ExactGaussian,
    /// `clamp(π_gauss, κ, 1/κ)`, unnormalized.
    Clamped,
}

/// Noise density `π_noise(ε)` for `ε ~ N(0, Γ)`, optionally clamped to `[κ, 1/κ]`.
#[derive(Debug, Clone)]
pub struct BoundedNoiseDensity {
    gamma: DMatrix<f64>,
    /// Lower Cholesky factor `L` of `Γ`.
    chol_l: DMatrix<f64>,
    log_normalizer: f64,
    kappa: f64,
    mode: NoiseMode,
}

impl BoundedNoiseDensity {
    pub fn gaussian(gamma: DMatrix<f64>) -> Result<Self> {
        Self::build(gamma, 1.0, NoiseMode::ExactGaussian)
    }

    /// `κ ∈ (0, 1]`; `κ = 1` makes the density identically 1.
    pub fn clamped(gamma: DMatrix<f64>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("κ must lie in (0, 1], got {kappa}")));
        }
        Self::build(gamma, kappa, NoiseMode::Clamped)
    }

    fn build(gamma: DMatrix<f64>, kappa: f64, mode: NoiseMode) -> Result<Self> {
        linalg::check_symmetric(&gamma, 1e-12, "noise covariance")?;
        SpdFactor::new(&gamma, f64::INFINITY, "noise covariance")?;
        let chol = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("noise covariance".into()))?;
        let chol_l = chol.l();
        let j = gamma.nrows() as f64;
        let log_det: f64 = chol_l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_normalizer = -0.5 * (j * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            gamma,
            chol_l,
            log_normalizer,
            kappa,
            mode,
        })
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// `L⁻¹ε` for `Γ = LLᵀ`.
    pub fn whiten(&self, eps: &DVector<f64>) -> DVector<f64> {
        self.chol_l
            .solve_lower_triangular(eps)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L w`, a draw from `N(0, Γ)` for standard normal `w`.
    pub fn colour(&self, white: &DVector<f64>) -> DVector<f64> {
        &self.chol_l * white
    }

    /// Log density in terms of the whitened residual `L⁻¹ε`.
    pub fn log_density_whitened(&self, white: &DVector<f64>) -> f64 {
        self.finish(-0.5 * white.norm_squared())
    }

    /// Log density from the squared Mahalanobis norm `εᵀΓ⁻¹ε`.
    #[inline]
    pub fn log_density_from_sq(&self, sq: f64) -> f64 {
        self.finish(-0.5 * sq)
    }

    #[inline]
    fn finish(&self, quad: f64) -> f64 {
        let g = self.log_normalizer + quad;
        match self.mode {
            NoiseMode::ExactGaussian => g,
            NoiseMode::Clamped => {
                let bound = -self.kappa.ln();
                g.clamp(-bound, bound)
            }
        }
    }

    pub fn log_density(&self, eps: &DVector<f64>) -> f64 {
        self.log_density_whitened(&self.whiten(eps))
    }

    pub fn density(&self, eps: &DVector<f64>) -> f64 {
        self.log_density(eps).exp()
    }

    /// `sup_ε log π_noise(ε)`.
    pub fn log_sup(&self) -> f64 {
        self.finish(0.0)
    }
}
