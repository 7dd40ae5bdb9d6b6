//! Forward-model pairs (accurate `F`, approximate `f`) and the priors used with them.

mod darcy2d;
mod poisson1d;
mod priors;
mod truth;

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use darcy2d::{
    darcy2d_linearize, darcy2d_observe, darcy2d_pair, darcy2d_solve, prolong_cells, Darcy2DConfig,
    Darcy2DPair, DarcyGrid, DarcyLinearization, TwoBumpTruth,
};
pub use poisson1d::{
    assemble_operator as poisson1d_operator, poisson1d_forward, poisson1d_pair, Poisson1D,
    Poisson1DConfig,
};
pub use priors::{
    brownian_prior, grid_neg_laplacian_2d, whittle_matern_prior, PriorSpec, EIT_PRESET_LAMBDA,
    EIT_PRESET_ZETA,
};
pub use truth::{draw_noise, draw_truth, synthesize_data, truth_and_data};

/// `f(u) = offset + matrix · u`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub offset: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl AffineMap {
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        Self {
            offset: DVector::zeros(matrix.nrows()),
            matrix,
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.matrix * u
    }
}

/// An accurate map `F` and a cheap approximation `f` on the same parameter and data spaces.
///
/// The model error is always `F(u) − f(u)` computed from the two evaluations.
pub trait ForwardModelPair: Sync {
    fn param_dim(&self) -> usize;

    fn data_dim(&self) -> usize;

    fn accurate(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn approximate(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn model_error(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.accurate(u)? - self.approximate(u)?)
    }

    /// The approximate map as an affine map, when it is one.
    fn approximate_affine(&self) -> Option<AffineMap> {
        None
    }

    fn label(&self) -> String {
        "forward model pair".to_string()
    }

    /// Cost of one accurate evaluation relative to one approximate evaluation.
    fn relative_cost(&self) -> f64 {
        1.0
    }
}

/// `F(u) = A★u`, `f(u) = Au`.
#[derive(Debug, Clone)]
pub struct LinearPair {
    pub a_star: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl LinearPair {
    pub fn new(a_star: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        if a_star.shape() != a.shape() {
            return Err(Error::DimensionMismatch(format!(
                "accurate operator is {:?}, approximate is {:?}",
                a_star.shape(),
                a.shape()
            )));
        }
        Ok(Self { a_star, a })
    }

    fn check(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "parameter has length {}, expected {}",
                u.len(),
                self.a.ncols()
            )));
        }
        Ok(())
    }
}

impl ForwardModelPair for LinearPair {
    fn param_dim(&self) -> usize {
        self.a.ncols()
    }

    fn data_dim(&self) -> usize {
        self.a.nrows()
    }

    fn accurate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(u)?;
        Ok(&self.a_star * u)
    }

    fn approximate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(u)?;
        Ok(&self.a * u)
    }

    fn approximate_affine(&self) -> Option<AffineMap> {
        Some(AffineMap::linear(self.a.clone()))
    }

    fn label(&self) -> String {
        format!("linear pair {}x{}", self.a.nrows(), self.a.ncols())
    }
}

/// Wraps a pair and counts evaluations of each map.
pub struct CountingPair<'a, P: ForwardModelPair + ?Sized> {
    inner: &'a P,
    accurate_calls: AtomicUsize,
    approximate_calls: AtomicUsize,
}

impl<'a, P: ForwardModelPair + ?Sized> CountingPair<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            accurate_calls: AtomicUsize::new(0),
            approximate_calls: AtomicUsize::new(0),
        }
    }

    pub fn accurate_calls(&self) -> usize {
        self.accurate_calls.load(Ordering::Relaxed)
    }

    pub fn approximate_calls(&self) -> usize {
        self.approximate_calls.load(Ordering::Relaxed)
    }
}

impl<P: ForwardModelPair + ?Sized> ForwardModelPair for CountingPair<'_, P> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn data_dim(&self) -> usize {
        self.inner.data_dim()
    }

    fn accurate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.accurate_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.accurate(u)
    }

    fn approximate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.approximate_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.approximate(u)
    }

    fn approximate_affine(&self) -> Option<AffineMap> {
        self.inner.approximate_affine()
    }

    fn label(&self) -> String {
        self.inner.label()
    }

    fn relative_cost(&self) -> f64 {
        self.inner.relative_cost()
    }
}
