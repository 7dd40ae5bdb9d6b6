//! Exact linear-Gaussian machinery.
//!
//! Everything here is a pure function of its inputs. Covariance updates use the
//! inverse-free form `C₀ − C₀Aᵀ(S)⁻¹AC₀`, where `S` is the J×J innovation matrix,
//! so the prior precision never has to be formed.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, BandedCholesky, SpdFactor, CONDITION_LIMIT};

/// Dimension above which iteration traces keep covariance summaries instead of matrices.
pub const FULL_COVARIANCE_LIMIT: usize = 4096;

/// Default relative tolerance for convergence detection.
pub const DEFAULT_TOL: f64 = 1e-10;

/// A square root `R` of a covariance, `C = R Rᵀ`, used to draw samples.
#[derive(Debug, Clone)]
pub enum CovarianceRoot {
    /// Dense factor, typically the Cholesky factor.
    Dense(DMatrix<f64>),
    /// `R = scale · W⁻¹` for a symmetric banded whitening operator `W`.
    Whitening { operator: BandedCholesky, scale: f64 },
}

impl CovarianceRoot {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceRoot::Dense(r) => r.nrows(),
            CovarianceRoot::Whitening { operator, .. } => operator.dim(),
        }
    }

    /// Maps a standard-normal vector to a centred draw with covariance `R Rᵀ`.
    pub fn apply(&self, white: &DVector<f64>) -> DVector<f64> {
        match self {
            CovarianceRoot::Dense(r) => r * white,
            CovarianceRoot::Whitening { operator, scale } => {
                let mut x: Vec<f64> = white.iter().map(|w| scale * w).collect();
                operator.solve_in_place(&mut x);
                DVector::from_vec(x)
            }
        }
    }
}

/// Gaussian measure `N(mean, covariance)` on ℝᵈ.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    root: Option<Arc<CovarianceRoot>>,
}

impl GaussianMeasure {
    /// Validates symmetry (1e-12 relative) and positive semi-definiteness (1e-10 relative).
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        linalg::check_symmetric(&covariance, 1e-12, "covariance")?;
        linalg::check_psd(&covariance, 1e-10, "covariance")?;
        Ok(Self {
            mean,
            covariance,
            root: None,
        })
    }

    /// Skips the eigenvalue check; for covariances that are PSD by construction.
    pub(crate) fn from_trusted(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), covariance.nrows());
        Self {
            mean,
            covariance,
            root: None,
        }
    }

    /// Standard normal `N(0, I)` on ℝᵈ.
    pub fn standard(d: usize) -> Self {
        Self::from_trusted(DVector::zeros(d), DMatrix::identity(d, d))
    }

    /// Attaches a precomputed sampling root. The caller guarantees `R Rᵀ = covariance`.
    pub fn with_root(mut self, root: CovarianceRoot) -> Result<Self> {
        if root.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "root has dimension {}, measure has {}",
                root.dim(),
                self.dim()
            )));
        }
        self.root = Some(Arc::new(root));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// The attached root, or a freshly computed dense one.
    pub fn root(&self) -> Result<Arc<CovarianceRoot>> {
        match &self.root {
            Some(r) => Ok(Arc::clone(r)),
            None => Ok(Arc::new(CovarianceRoot::Dense(linalg::psd_root(
                &self.covariance,
                "covariance",
            )?))),
        }
    }

    /// Same measure with the root computed and cached.
    pub fn with_cached_root(mut self) -> Result<Self> {
        if self.root.is_none() {
            self.root = Some(self.root()?);
        }
        Ok(self)
    }
}

/// A linear accurate/approximate operator pair with Gaussian noise and prior.
///
/// The model-error operator `M = A★ − A` is always derived, never stored.
#[derive(Debug, Clone)]
pub struct LinearModelPair {
    a_star: DMatrix<f64>,
    a: DMatrix<f64>,
    gamma: DMatrix<f64>,
    prior: GaussianMeasure,
    delta: f64,
}

impl LinearModelPair {
    pub fn new(
        a_star: DMatrix<f64>,
        a: DMatrix<f64>,
        gamma: DMatrix<f64>,
        prior: GaussianMeasure,
    ) -> Result<Self> {
        if a_star.shape() != a.shape() {
            return Err(Error::DimensionMismatch(format!(
                "accurate operator is {:?}, approximate is {:?}",
                a_star.shape(),
                a.shape()
            )));
        }
        if a.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch(format!(
                "operators act on dimension {}, prior has {}",
                a.ncols(),
                prior.dim()
            )));
        }
        if gamma.shape() != (a.nrows(), a.nrows()) {
            return Err(Error::DimensionMismatch(format!(
                "noise covariance is {:?}, data dimension is {}",
                gamma.shape(),
                a.nrows()
            )));
        }
        linalg::check_symmetric(&gamma, 1e-12, "noise covariance")?;
        let min = linalg::min_eigenvalue(&gamma);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "noise covariance: smallest eigenvalue {min:.3e}"
            )));
        }
        Ok(Self {
            a_star,
            a,
            gamma,
            prior,
            delta: 1.0,
        })
    }

    /// Scales the model-error operator by `delta ≥ 0`.
    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn a_star(&self) -> &DMatrix<f64> {
        &self.a_star
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn prior(&self) -> &GaussianMeasure {
        &self.prior
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn param_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `M = A★ − A` (unscaled).
    pub fn model_error_operator(&self) -> DMatrix<f64> {
        &self.a_star - &self.a
    }

    /// `δM`.
    pub fn scaled_model_error_operator(&self) -> DMatrix<f64> {
        self.model_error_operator() * self.delta
    }
}

/// Products of a fixed operator with the prior covariance, reused across updates.
#[derive(Debug, Clone)]
pub(crate) struct PriorProducts {
    a: DMatrix<f64>,
    /// `A C₀`, J×d.
    a_c0: DMatrix<f64>,
    /// `A C₀ Aᵀ`, J×J.
    a_c0_at: DMatrix<f64>,
}

impl PriorProducts {
    pub(crate) fn new(prior: &GaussianMeasure, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} columns, prior dimension is {}",
                a.ncols(),
                prior.dim()
            )));
        }
        let a_c0 = a * prior.covariance();
        let mut a_c0_at = &a_c0 * a.transpose();
        linalg::symmetrize(&mut a_c0_at);
        Ok(Self {
            a: a.clone(),
            a_c0,
            a_c0_at,
        })
    }

    /// Factor of `noise + A C₀ Aᵀ`.
    fn innovation(&self, noise: &DMatrix<f64>) -> Result<SpdFactor> {
        if noise.shape() != self.a_c0_at.shape() {
            return Err(Error::DimensionMismatch(format!(
                "noise covariance is {:?}, data dimension is {}",
                noise.shape(),
                self.a.nrows()
            )));
        }
        let mut s = noise + &self.a_c0_at;
        linalg::symmetrize(&mut s);
        SpdFactor::new(&s, CONDITION_LIMIT, "innovation matrix")
    }

    /// Gain transpose `S⁻¹ A C₀` (J×d) for the given noise covariance.
    pub(crate) fn gain_transpose(&self, noise: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.innovation(noise)?.solve(&self.a_c0))
    }

    /// Conditions the prior on `b = A u + shift + η`, `η ~ N(0, noise)`.
    pub(crate) fn update(
        &self,
        prior: &GaussianMeasure,
        noise: &DMatrix<f64>,
        shift: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<GaussianMeasure> {
        let factor = self.innovation(noise)?;
        let mean = self.mean_with(&factor, prior, shift, b)?;
        let gain_t = factor.solve(&self.a_c0);
        let mut cov = prior.covariance() - self.a_c0.transpose() * &gain_t;
        linalg::symmetrize(&mut cov);
        Ok(GaussianMeasure::from_trusted(mean, cov))
    }

    fn mean_with(
        &self,
        factor: &SpdFactor,
        prior: &GaussianMeasure,
        shift: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let j = self.a.nrows();
        if shift.len() != j || b.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "data has length {}, shift {}, expected {j}",
                b.len(),
                shift.len()
            )));
        }
        let innovation = b - &self.a * prior.mean() - shift;
        let weights = factor.solve_vec(&innovation);
        Ok(prior.mean() + self.a_c0.transpose() * weights)
    }
}

/// Gaussian conditioning `prior | b = A u + shift + η`, `η ~ N(0, gamma)`.
///
/// Returns `C₀ − C₀Aᵀ(Γ + AC₀Aᵀ)⁻¹AC₀` and `m₀ + C₀Aᵀ(Γ + AC₀Aᵀ)⁻¹(b − Am₀ − shift)`.
pub fn posterior_update(
    prior: &GaussianMeasure,
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    shift: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<GaussianMeasure> {
    PriorProducts::new(prior, a)?.update(prior, gamma, shift, b)
}

/// One step of the model-error iteration.
#[derive(Debug, Clone)]
pub struct LinearIterator<'a> {
    model: &'a LinearModelPair,
    products: PriorProducts,
    m_scaled: DMatrix<f64>,
}

impl<'a> LinearIterator<'a> {
    pub fn new(model: &'a LinearModelPair) -> Result<Self> {
        Ok(Self {
            model,
            products: PriorProducts::new(model.prior(), model.a())?,
            m_scaled: model.scaled_model_error_operator(),
        })
    }

    /// Inflated noise covariance `Γ + δ²MCMᵀ` and shift `δMm` for the current iterate.
    pub fn effective_noise(&self, current: &GaussianMeasure) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if current.dim() != self.model.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "iterate has dimension {}, model expects {}",
                current.dim(),
                self.model.param_dim()
            )));
        }
        let mc = &self.m_scaled * current.covariance();
        let mut noise = self.model.gamma() + &mc * self.m_scaled.transpose();
        linalg::symmetrize(&mut noise);
        let shift = &self.m_scaled * current.mean();
        Ok((noise, shift))
    }

    pub fn step(&self, current: &GaussianMeasure, b: &DVector<f64>) -> Result<GaussianMeasure> {
        let (noise, shift) = self.effective_noise(current)?;
        self.products.update(self.model.prior(), &noise, &shift, b)
    }
}

/// `μ_{ℓ+1}` from `μ_ℓ`: conditions the prior on `b` with model-error law `N(δMm_ℓ, δ²MC_ℓMᵀ)`.
pub fn iterate_step(
    model: &LinearModelPair,
    current: &GaussianMeasure,
    b: &DVector<f64>,
) -> Result<GaussianMeasure> {
    LinearIterator::new(model)?.step(current, b)
}

/// Compact description of a covariance for large-dimensional traces.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSummary {
    pub trace: f64,
    pub frobenius: f64,
    pub marginal_variances: DVector<f64>,
}

impl CovarianceSummary {
    pub fn of(c: &DMatrix<f64>) -> Self {
        Self {
            trace: c.trace(),
            frobenius: c.norm(),
            marginal_variances: c.diagonal(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CovarianceHistory {
    Full(Vec<DMatrix<f64>>),
    Summaries(Vec<CovarianceSummary>),
}

impl CovarianceHistory {
    pub fn len(&self) -> usize {
        match self {
            CovarianceHistory::Full(v) => v.len(),
            CovarianceHistory::Summaries(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn full(&self) -> Option<&[DMatrix<f64>]> {
        match self {
            CovarianceHistory::Full(v) => Some(v),
            CovarianceHistory::Summaries(_) => None,
        }
    }
}

/// Per-iteration record of a Gaussian model-error run, `ℓ = 0…L` (index 0 is the prior).
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub means: Vec<DVector<f64>>,
    pub covariances: CovarianceHistory,
    /// `‖m_ℓ − m_{ℓ−1}‖`; zero at ℓ = 0.
    pub mean_steps: Vec<f64>,
    /// `‖C_ℓ − C_{ℓ−1}‖_F`; zero at ℓ = 0.
    pub cov_steps: Vec<f64>,
    /// Distances to a reference; empty until one is set.
    pub mean_errors: Vec<f64>,
    pub cov_errors: Vec<f64>,
    /// First iterate that the map leaves unchanged within tolerance.
    pub converged_at: Option<usize>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn final_mean(&self) -> &DVector<f64> {
        self.means.last().expect("trace is never empty")
    }

    pub fn final_covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariances.full().and_then(|v| v.last())
    }

    /// Distances of every iterate to `(mean, cov)` (Euclidean, Frobenius).
    pub fn errors_against(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let covs = self.covariances.full().ok_or(Error::SummaryOnly)?;
        let me = self.means.iter().map(|m| (m - mean).norm()).collect();
        let ce = covs.iter().map(|c| (c - cov).norm()).collect();
        Ok((me, ce))
    }

    /// Stores distances to `(mean, cov)` in `mean_errors` / `cov_errors`.
    pub fn set_errors_against(&mut self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
        let (me, ce) = self.errors_against(mean, cov)?;
        self.mean_errors = me;
        self.cov_errors = ce;
        Ok(())
    }

    /// Stores distances to the final iterate `(m_L, C_L)`.
    pub fn set_errors_against_limit(&mut self) -> Result<()> {
        let mean = self.final_mean().clone();
        let cov = self.final_covariance().ok_or(Error::SummaryOnly)?.clone();
        self.set_errors_against(&mean, &cov)
    }

    /// CSV with columns `iter, mean_err, cov_err, mean_step, cov_step`.
    ///
    /// Missing error columns are written empty. Values use 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,mean_err,cov_err,mean_step,cov_step")?;
        for l in 0..self.len() {
            let me = self.mean_errors.get(l).map(|v| fmt_f64(*v)).unwrap_or_default();
            let ce = self.cov_errors.get(l).map(|v| fmt_f64(*v)).unwrap_or_default();
            writeln!(
                out,
                "{l},{me},{ce},{},{}",
                fmt_f64(self.mean_steps[l]),
                fmt_f64(self.cov_steps[l])
            )?;
        }
        Ok(())
    }
}

/// Formats with 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the iteration from the prior for `max_iters` steps.
///
/// Every iterate is recorded. `converged_at` is the first ℓ with
/// `‖m_{ℓ+1} − m_ℓ‖ ≤ tol·(1 + ‖m_{ℓ+1}‖)` and the matching Frobenius test on the covariance.
pub fn run_linear_iteration(
    model: &LinearModelPair,
    b: &DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<IterationTrace> {
    run_linear_iteration_against(model, b, max_iters, tol, None)
}

/// As [`run_linear_iteration`], additionally accumulating errors against `reference`
/// while iterating (works in summary mode too).
pub fn run_linear_iteration_against(
    model: &LinearModelPair,
    b: &DVector<f64>,
    max_iters: usize,
    tol: f64,
    reference: Option<&GaussianMeasure>,
) -> Result<IterationTrace> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be nonnegative, got {tol}")));
    }
    if b.len() != model.data_dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has length {}, model expects {}",
            b.len(),
            model.data_dim()
        )));
    }
    if let Some(r) = reference {
        if r.dim() != model.param_dim() {
            return Err(Error::DimensionMismatch("reference dimension".into()));
        }
    }
    let iterator = LinearIterator::new(model)?;
    let keep_full = model.param_dim() <= FULL_COVARIANCE_LIMIT;
    let prior = model.prior();

    let mut means = vec![prior.mean().clone()];
    let mut full = Vec::new();
    let mut summaries = Vec::new();
    if keep_full {
        full.push(prior.covariance().clone());
    } else {
        summaries.push(CovarianceSummary::of(prior.covariance()));
    }
    let mut mean_steps = vec![0.0];
    let mut cov_steps = vec![0.0];
    let mut mean_errors = Vec::new();
    let mut cov_errors = Vec::new();
    let record_errors = |m: &GaussianMeasure, me: &mut Vec<f64>, ce: &mut Vec<f64>| {
        if let Some(r) = reference {
            me.push((m.mean() - r.mean()).norm());
            ce.push((m.covariance() - r.covariance()).norm());
        }
    };
    record_errors(prior, &mut mean_errors, &mut cov_errors);

    let mut converged_at = None;
    let mut current = prior.clone();
    for l in 1..=max_iters {
        let next = iterator.step(&current, b)?;
        let dm = (next.mean() - current.mean()).norm();
        let dc = (next.covariance() - current.covariance()).norm();
        if converged_at.is_none()
            && dm <= tol * (1.0 + next.mean().norm())
            && dc <= tol * (1.0 + next.covariance().norm())
        {
            converged_at = Some(l - 1);
        }
        mean_steps.push(dm);
        cov_steps.push(dc);
        record_errors(&next, &mut mean_errors, &mut cov_errors);
        means.push(next.mean().clone());
        if keep_full {
            full.push(next.covariance().clone());
        } else {
            summaries.push(CovarianceSummary::of(next.covariance()));
        }
        current = next;
    }
    let covariances = if keep_full {
        CovarianceHistory::Full(full)
    } else {
        CovarianceHistory::Summaries(summaries)
    };
    Ok(IterationTrace {
        means,
        covariances,
        mean_steps,
        cov_steps,
        mean_errors,
        cov_errors,
        converged_at,
    })
}

/// Deviations `‖m_ℓ − m_L‖` and `‖C_ℓ − C_L‖_F` from the final iterate, `ℓ = 0…L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitDeviations {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

/// Deviations from `(m_L, C_L)` computed from the increments
/// `d_ℓ = m_{ℓ+1} − m_ℓ`, `D_ℓ = C_{ℓ+1} − C_ℓ` rather than by subtracting iterates.
///
/// With `K_ℓ = C₀AᵀS_ℓ⁻¹` and `E_ℓ = δ²M D_{ℓ−1} Mᵀ = S_ℓ − S_{ℓ−1}`:
///
/// - `D_ℓ = K_ℓ E_ℓ K_{ℓ−1}ᵀ`
/// - `d_ℓ = −K_ℓ E_ℓ S_{ℓ−1}⁻¹ r_ℓ − δK_{ℓ−1} M d_{ℓ−1}`, `r_ℓ = b − Am₀ − δMm_ℓ`
///
/// Each increment carries relative rather than absolute rounding error, so the
/// deviations keep decaying geometrically far below `ε·‖m_L‖` instead of plateauing.
pub fn limit_deviations(
    model: &LinearModelPair,
    b: &DVector<f64>,
    max_iters: usize,
) -> Result<LimitDeviations> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if b.len() != model.data_dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has length {}, model expects {}",
            b.len(),
            model.data_dim()
        )));
    }
    if model.param_dim() > FULL_COVARIANCE_LIMIT {
        return Err(Error::SummaryOnly);
    }
    let prior = model.prior();
    let products = PriorProducts::new(prior, model.a())?;
    let m = model.scaled_model_error_operator();
    let c0_at = products.a_c0.transpose();
    let base = b - model.a() * prior.mean();

    let mut s = model.gamma() + &products.a_c0_at + &m * prior.covariance() * m.transpose();
    linalg::symmetrize(&mut s);
    let mut factor = SpdFactor::new(&s, CONDITION_LIMIT, "innovation matrix")?;
    let mut gain = factor.solve(&products.a_c0).transpose();
    let mut mean = prior.mean().clone();
    let mut residual = &base - &m * &mean;
    let mut dm = &gain * &residual;
    let mut dc = -(&gain * &products.a_c0);
    linalg::symmetrize(&mut dc);
    let mut mean_steps = vec![dm.clone()];
    let mut cov_steps = vec![dc.clone()];
    for _ in 1..max_iters {
        mean += &dm;
        residual = &base - &m * &mean;
        let mut e = &m * &dc * m.transpose();
        linalg::symmetrize(&mut e);
        s += &e;
        let next_factor = SpdFactor::new(&s, CONDITION_LIMIT, "innovation matrix")?;
        let next_gain = &c0_at * next_factor.inverse();
        let gain_e = &next_gain * &e;
        let next_dm = -(&gain_e * factor.solve_vec(&residual)) - &gain * (&m * &dm);
        let mut next_dc = &gain_e * gain.transpose();
        linalg::symmetrize(&mut next_dc);
        dm = next_dm;
        dc = next_dc;
        mean_steps.push(dm.clone());
        cov_steps.push(dc.clone());
        factor = next_factor;
        gain = next_gain;
    }

    let d = model.param_dim();
    let mut mean_tail = DVector::zeros(d);
    let mut cov_tail = DMatrix::zeros(d, d);
    let mut out_mean = vec![0.0; max_iters + 1];
    let mut out_cov = vec![0.0; max_iters + 1];
    for l in (0..max_iters).rev() {
        mean_tail += &mean_steps[l];
        cov_tail += &cov_steps[l];
        out_mean[l] = mean_tail.norm();
        out_cov[l] = cov_tail.norm();
    }
    Ok(LimitDeviations {
        mean: out_mean,
        cov: out_cov,
    })
}

/// The precision map `R(B) = Aᵀ(Γ + δ²M B⁻¹ Mᵀ)⁻¹A + B₀` with `B₀ = C₀⁻¹` factored once.
#[derive(Debug, Clone)]
pub struct PrecisionIteration {
    a: DMatrix<f64>,
    gamma: DMatrix<f64>,
    m_scaled: DMatrix<f64>,
    b0: DMatrix<f64>,
}

impl PrecisionIteration {
    pub fn new(model: &LinearModelPair) -> Result<Self> {
        let factor = SpdFactor::new(
            model.prior().covariance(),
            f64::INFINITY,
            "prior covariance",
        )?;
        let mut b0 = factor.inverse();
        linalg::symmetrize(&mut b0);
        Ok(Self {
            a: model.a().clone(),
            gamma: model.gamma().clone(),
            m_scaled: model.scaled_model_error_operator(),
            b0,
        })
    }

    /// The prior precision `B₀`.
    pub fn prior_precision(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn apply(&self, b_matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b_matrix.shape() != self.b0.shape() {
            return Err(Error::DimensionMismatch(format!(
                "precision is {:?}, expected {:?}",
                b_matrix.shape(),
                self.b0.shape()
            )));
        }
        linalg::check_symmetric(b_matrix, 1e-10, "precision")?;
        let b_factor = SpdFactor::new(b_matrix, f64::INFINITY, "precision")?;
        // M B⁻¹ Mᵀ = (B⁻¹ Mᵀ)ᵀ Mᵀ
        let binv_mt = b_factor.solve(&self.m_scaled.transpose());
        let mut inner = &self.gamma + &self.m_scaled * binv_mt;
        linalg::symmetrize(&mut inner);
        let inner_factor = SpdFactor::new(&inner, f64::INFINITY, "Γ + M B⁻¹ Mᵀ")?;
        let mut r = self.a.transpose() * inner_factor.solve(&self.a) + &self.b0;
        linalg::symmetrize(&mut r);
        Ok(r)
    }
}

/// `R(B)` for a single application; see [`PrecisionIteration`] for repeated use.
pub fn precision_iterate(b_matrix: &DMatrix<f64>, model: &LinearModelPair) -> Result<DMatrix<f64>> {
    PrecisionIteration::new(model)?.apply(b_matrix)
}

/// Upper bound `β̂ = ‖C₀Aᵀ(Γ + AC₀Aᵀ)⁻¹‖₂ · ‖A★ − A‖₂` on the contraction constant.
///
/// `β̂·δ < 1` places the iteration in the geometric-convergence regime. The bound takes
/// the resolvent at zero model-error covariance, which maximizes its norm; it is not tight.
pub fn contraction_bound(model: &LinearModelPair) -> Result<f64> {
    let m_norm = linalg::spectral_norm(&model.model_error_operator());
    if m_norm == 0.0 {
        return Ok(0.0);
    }
    let products = PriorProducts::new(model.prior(), model.a())?;
    let gain_t = products.gain_transpose(model.gamma())?;
    Ok(linalg::spectral_norm(&gain_t) * m_norm)
}

/// Least-squares slope of `ln(errors[ℓ])` against ℓ over the leading run of entries
/// strictly above `plateau_floor` (default `10·ε·errors[0]`).
pub fn estimate_rate(errors: &[f64], plateau_floor: Option<f64>) -> Result<f64> {
    let first = *errors.first().ok_or(Error::InsufficientDecay { usable: 0 })?;
    let floor = plateau_floor.unwrap_or(10.0 * f64::EPSILON * first);
    let usable = errors
        .iter()
        .take_while(|&&e| e > floor && e.is_finite())
        .count();
    if usable < 3 {
        return Err(Error::InsufficientDecay { usable });
    }
    let (slope, _) = fit_line(
        &(0..usable).map(|l| l as f64).collect::<Vec<_>>(),
        &errors[..usable].iter().map(|e| e.ln()).collect::<Vec<_>>(),
    );
    Ok(slope)
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns `(slope, r²)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return (0.0, 1.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(m: f64, c: f64) -> GaussianMeasure {
        GaussianMeasure::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, c)).unwrap()
    }

    #[test]
    fn conjugate_scalar_update() {
        let post = posterior_update(
            &scalar(0.0, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::zeros(1),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(post.mean()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(post.covariance()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_operator_leaves_prior_unchanged() {
        let prior = GaussianMeasure::new(
            DVector::from_vec(vec![0.3, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let post = posterior_update(
            &prior,
            &DMatrix::zeros(3, 2),
            &DMatrix::identity(3, 3),
            &DVector::zeros(3),
            &DVector::from_vec(vec![5.0, -2.0, 7.0]),
        )
        .unwrap();
        assert_eq!(post.mean(), prior.mean());
        assert_eq!(post.covariance(), prior.covariance());
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let err = GaussianMeasure::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let err = GaussianMeasure::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemiDefinite(_)));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = posterior_update(
            &scalar(0.0, 1.0),
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn singular_innovation_is_ill_posed() {
        let prior = GaussianMeasure::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let err = posterior_update(
            &prior,
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1e-300),
            &DVector::zeros(1),
            &DVector::zeros(1),
        );
        // 1 + 1e-300 is perfectly conditioned; a rank-deficient 2×2 is not.
        assert!(err.is_ok());
        let prior2 = GaussianMeasure::standard(1);
        let err = posterior_update(
            &prior2,
            &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            &DMatrix::from_diagonal_element(2, 2, 1e-20),
            &DVector::zeros(2),
            &DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn estimate_rate_geometric_and_flat() {
        let s = estimate_rate(&[1.0, 0.1, 0.01, 0.001], Some(1e-6)).unwrap();
        assert_relative_eq!(s, -(10.0f64).ln(), epsilon = 1e-12);
        assert_eq!(estimate_rate(&[1.0, 1.0, 1.0], Some(1e-6)).unwrap(), 0.0);
    }

    #[test]
    fn estimate_rate_drops_plateau() {
        let s = estimate_rate(&[1.0, 0.1, 0.01, 1e-20, 1e-19], None).unwrap();
        assert_relative_eq!(s, -(10.0f64).ln(), epsilon = 1e-12);
        assert!(matches!(
            estimate_rate(&[1.0, 0.1, 1e-30], None),
            Err(Error::InsufficientDecay { usable: 2 })
        ));
    }

    #[test]
    fn limit_deviations_match_subtraction() {
        let prior = GaussianMeasure::new(
            DVector::from_vec(vec![0.2, -0.1, 0.4]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.8]),
        )
        .unwrap();
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -0.4]);
        let a_star = &a + DMatrix::from_row_slice(2, 3, &[0.3, 0.0, 0.1, -0.2, 0.1, 0.2]);
        let model = LinearModelPair::new(a_star, a, DMatrix::identity(2, 2) * 0.1, prior).unwrap();
        let b = DVector::from_vec(vec![0.7, -0.3]);
        let mut trace = run_linear_iteration(&model, &b, 8, 0.0).unwrap();
        trace.set_errors_against_limit().unwrap();
        let dev = limit_deviations(&model, &b, 8).unwrap();
        assert_eq!(dev.mean.len(), trace.len());
        for l in 0..trace.len() {
            assert_relative_eq!(dev.mean[l], trace.mean_errors[l], epsilon = 1e-12);
            assert_relative_eq!(dev.cov[l], trace.cov_errors[l], epsilon = 1e-12);
        }
        assert_eq!(dev.mean[8], 0.0);
    }

    #[test]
    fn zero_step_trace_has_prior_only_steps() {
        let prior = GaussianMeasure::standard(2);
        let a = DMatrix::identity(2, 2);
        let model = LinearModelPair::new(a.clone(), a, DMatrix::identity(2, 2), prior).unwrap();
        let trace = run_linear_iteration(&model, &DVector::from_vec(vec![1.0, 1.0]), 3, 1e-12).unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(trace.converged_at, Some(1));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,mean_err,cov_err,mean_step,cov_step\n0,,,"));
        assert_eq!(text.lines().count(), 5);
    }
}
