use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{CovarianceRoot, GaussianMeasure, FULL_COVARIANCE_LIMIT};
use crate::linalg::{self, BandedSpd};

/// Correlation length of the impedance-tomography preset.
pub const EIT_PRESET_LAMBDA: f64 = 0.2;
/// Amplitude scaling of the impedance-tomography preset.
pub const EIT_PRESET_ZETA: f64 = 1.0 / 15.0;

/// Prior families used by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Brownian motion on (0, 1) pinned at 0, free at 1, on `2^level − 1` nodes.
    BrownianMotion { level: u32 },
    /// `ζλ⁻¹(−λ²L_g + I)u ~ N(0, I)` with the 5-point Laplacian on an `n×n` cell grid.
    WhittleMatern { lambda: f64, zeta: f64, grid: usize },
}

impl PriorSpec {
    pub fn build(&self) -> Result<GaussianMeasure> {
        match self {
            PriorSpec::BrownianMotion { level } => brownian_prior(*level),
            PriorSpec::WhittleMatern { lambda, zeta, grid } => {
                let h = 1.0 / *grid as f64;
                whittle_matern_prior(*lambda, *zeta, &grid_neg_laplacian_2d(*grid, h))
            }
        }
    }
}

/// Discrete Brownian motion on nodes `x_i = i·h`, `h = 2^{−level}`.
///
/// The precision is `h` times the finite-difference Laplacian with `u(0) = 0` and
/// `u′(1) = 0`. Eliminating the boundary value with the one-sided second-order
/// Neumann stencil and rescaling that row to restore symmetry leaves a last row
/// `(−1, 1)/h²`. The resulting covariance is `min(x_i, x_j)` at the nodes.
pub fn brownian_prior(level: u32) -> Result<GaussianMeasure> {
    if level < 2 {
        return Err(Error::InvalidConfig(format!("Brownian prior level must be ≥ 2, got {level}")));
    }
    let k = super::poisson1d::interior_points(level);
    let h = 1.0 / (1u64 << level) as f64;
    let mut diag = vec![2.0 / h; k];
    diag[k - 1] = 1.0 / h;
    let off = vec![-1.0 / h; k - 1];
    let mut cov = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = linalg::solve_symmetric_tridiagonal(&diag, &off, &e)?;
        cov.set_column(j, &DVector::from_vec(col));
    }
    linalg::symmetrize(&mut cov);
    GaussianMeasure::from_trusted(DVector::zeros(k), cov).with_cached_root()
}

/// `−L_g` for the 5-point graph Laplacian on an `n×n` grid with spacing `h`.
///
/// Neighbours outside the grid are absent (graph convention), so the matrix is PSD
/// with the constant vector in its kernel. Index `k = row·n + col`.
pub fn grid_neg_laplacian_2d(n: usize, h: f64) -> BandedSpd {
    let scale = 1.0 / (h * h);
    let mut l = BandedSpd::zeros(n * n, n);
    for r in 0..n {
        for c in 0..n {
            let k = r * n + c;
            if c + 1 < n {
                l.add(k, k, scale);
                l.add(k + 1, k + 1, scale);
                l.add(k + 1, k, -scale);
            }
            if r + 1 < n {
                l.add(k, k, scale);
                l.add(k + n, k + n, scale);
                l.add(k + n, k, -scale);
            }
        }
    }
    l
}

/// Whittle–Matérn prior: mean 0, covariance `(λ/ζ)²(λ²(−L_g) + I)⁻²`.
///
/// `neg_laplacian` is `−L_g` (positive semi-definite). Samples are drawn by solving
/// `(λ²(−L_g) + I)u = (λ/ζ)w`; the dense covariance is materialized only up to
/// [`FULL_COVARIANCE_LIMIT`] parameters.
pub fn whittle_matern_prior(lambda: f64, zeta: f64, neg_laplacian: &BandedSpd) -> Result<GaussianMeasure> {
    if !(lambda > 0.0) || !(zeta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "λ and ζ must be positive, got {lambda} and {zeta}"
        )));
    }
    let d = neg_laplacian.dim();
    if d > FULL_COVARIANCE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "{d} parameters exceed the dense covariance limit {FULL_COVARIANCE_LIMIT}"
        )));
    }
    let bw = neg_laplacian.bandwidth();
    let mut w = BandedSpd::zeros(d, bw);
    for i in 0..d {
        for j in i.saturating_sub(bw)..=i {
            let v = lambda * lambda * neg_laplacian.get(i, j) + if i == j { 1.0 } else { 0.0 };
            if v != 0.0 {
                w.add(i, j, v);
            }
        }
    }
    let factor = w.factor().map_err(|e| {
        Error::NotPositiveDefinite(format!("whitening operator −λ²L_g + I is indefinite: {e}"))
    })?;
    let scale = lambda / zeta;
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut x = vec![0.0; d];
            x[j] = scale * scale;
            factor.solve_in_place(&mut x);
            factor.solve_in_place(&mut x);
            x
        })
        .collect();
    let mut cov = DMatrix::from_fn(d, d, |i, j| columns[j][i]);
    linalg::symmetrize(&mut cov);
    GaussianMeasure::from_trusted(DVector::zeros(d), cov).with_root(CovarianceRoot::Whitening {
        operator: factor,
        scale,
    })
}
