//! Dense and banded linear-algebra helpers shared by the inference and model code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling above which an inner solve is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Replaces `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Checks `‖m − mᵀ‖_max ≤ rel_tol · max(1, ‖m‖_max)`.
pub fn check_symmetric(m: &DMatrix<f64>, rel_tol: f64, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return Err(Error::NotSymmetric(format!(
                    "{what}: entries ({i},{j}) and ({j},{i}) differ by {:.3e}",
                    (m[(i, j)] - m[(j, i)]).abs()
                )));
            }
        }
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigen_extremes(m).0
}

/// PSD test: smallest eigenvalue ≥ −`rel_slack` · max(|λ_max|, tiny).
pub fn check_psd(m: &DMatrix<f64>, rel_slack: f64, what: &str) -> Result<()> {
    let (min, max) = eigen_extremes(m);
    if min < -rel_slack * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemiDefinite(format!(
            "{what}: smallest eigenvalue {min:.3e}, largest {max:.3e}"
        )));
    }
    Ok(())
}

/// Spectral norm, computed from the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    eigen_extremes(&gram).1.max(0.0).sqrt()
}

/// Cholesky factor of a symmetric positive definite matrix with a condition guard.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

impl SpdFactor {
    /// Factors `m`, rejecting it when the eigenvalue ratio exceeds `condition_limit`.
    pub fn new(m: &DMatrix<f64>, condition_limit: f64, what: &str) -> Result<Self> {
        let (min, max) = eigen_extremes(m);
        if min <= 0.0 || !min.is_finite() || !max.is_finite() {
            if max > 0.0 && min.is_finite() && min > -1e-14 * max {
                return Err(Error::IllConditioned {
                    condition: f64::INFINITY,
                    limit: condition_limit,
                });
            }
            return Err(Error::NotPositiveDefinite(format!(
                "{what}: smallest eigenvalue {min:.3e}"
            )));
        }
        let condition = max / min;
        if condition > condition_limit {
            return Err(Error::IllConditioned {
                condition,
                limit: condition_limit,
            });
        }
        let chol = nalgebra::linalg::Cholesky::new(m.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("{what}: Cholesky factorization failed"))
        })?;
        Ok(Self { chol, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// A symmetric square root `R` with `R Rᵀ = m` for a PSD matrix.
///
/// Cholesky is tried first; singular or semi-definite inputs fall back to an
/// eigen-decomposition with clamped eigenvalues.
pub fn psd_root(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::linalg::Cholesky::new(m.clone()) {
        let l = chol.l();
        if l.iter().all(|v| v.is_finite()) {
            return Ok(l);
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemiDefinite(format!(
            "{what}: smallest eigenvalue {min:.3e}, largest {max:.3e}"
        )));
    }
    let mut root = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    Ok(root)
}

/// Solves a symmetric tridiagonal system with the Thomas algorithm.
///
/// `diag` has length n, `off` has length n − 1 (sub- and super-diagonal).
pub fn solve_symmetric_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || off.len() + 1 != n.max(1) {
        return Err(Error::DimensionMismatch(format!(
            "tridiagonal system: diag {n}, off {}, rhs {}",
            off.len(),
            rhs.len()
        )));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::SolverBreakdown("zero pivot in tridiagonal solve".into()));
    }
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SolverBreakdown("zero pivot in tridiagonal solve".into()));
        }
        c[i] = if i + 1 < n { off[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Symmetric positive definite matrix in lower band storage.
///
/// Entry `(i, j)` with `i − bandwidth ≤ j ≤ i` lives at `data[i * (bandwidth + 1) + j + bandwidth − i]`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bandwidth + 1) + j + self.bandwidth - i
    }

    /// Adds `v` to entry `(i, j)`; either triangle may be addressed.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bandwidth, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bandwidth {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// In-place banded Cholesky factorization.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let p = self.bandwidth;
        let w = p + 1;
        for i in 0..self.n {
            let lo_i = i.saturating_sub(p);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(p));
                let mut s = self.data[i * w + j + p - i];
                let row_i = i * w + p - i;
                let row_j = j * w + p - j;
                for k in lo..j {
                    s -= self.data[row_i + k] * self.data[row_j + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SolverBreakdown(format!(
                            "banded Cholesky: non-positive pivot {s:.3e} at row {i}"
                        )));
                    }
                    self.data[row_i + i] = s.sqrt();
                } else {
                    self.data[row_i + j] = s / self.data[row_j + j];
                }
            }
        }
        Ok(BandedCholesky { factor: self })
    }
}

/// Lower band Cholesky factor `L` of a [`BandedSpd`] matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    factor: BandedSpd,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.factor.n
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let f = &self.factor;
        let p = f.bandwidth;
        let w = p + 1;
        let n = f.n;
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let row = i * w + p - i;
            let mut s = x[i];
            for k in i.saturating_sub(p)..i {
                s -= f.data[row + k] * x[k];
            }
            x[i] = s / f.data[row + i];
        }
        #[allow(clippy::needless_range_loop)]
        for i in (0..n).rev() {
            let row = i * w + p - i;
            x[i] /= f.data[row + i];
            let xi = x[i];
            for k in i.saturating_sub(p)..i {
                x[k] -= f.data[row + k] * xi;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
