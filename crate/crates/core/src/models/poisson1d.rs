//! 1D inverse source problem: `−p″ = u` on (0, 1), `p(0) = p(1) = 0`, observed at `q_j = j/16`.
//!
//! The source lives on a parameter grid with nodes `x_k = k·2^{−P}`, `k = 1…2^P − 1`,
//! pinned to zero at `x = 0` and extended by a constant past the last node. It is
//! transferred to each solver grid by linear interpolation (injection when the solver
//! grid is coarser), so the accurate and approximate operators act on the same vector.

use nalgebra::{DMatrix, DVector};

use super::{AffineMap, ForwardModelPair};
use crate::error::{Error, Result};
use crate::linalg::solve_symmetric_tridiagonal;

/// Observation points `q_j = j/16`.
pub const OBSERVATION_COUNT: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct Poisson1DConfig {
    /// Fine solver level: `2^fine_level − 1` interior points.
    pub fine_level: u32,
    /// Coarse solver level `n`: `2^n − 1` interior points.
    pub coarse_level: u32,
    /// Parameter grid level, at most `fine_level`; defaults to the coarse level.
    pub parameter_level: Option<u32>,
    /// Noise variance γ² in `Γ = γ²I`.
    pub noise_var: f64,
}

impl Default for Poisson1DConfig {
    fn default() -> Self {
        Self {
            fine_level: 10,
            coarse_level: 6,
            parameter_level: None,
            noise_var: 1e-8,
        }
    }
}

impl Poisson1DConfig {
    pub fn with_coarse_level(coarse_level: u32) -> Self {
        Self {
            coarse_level,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=9).contains(&self.coarse_level) {
            return Err(Error::InvalidConfig(format!(
                "coarse level must lie in [3, 9], got {}",
                self.coarse_level
            )));
        }
        if self.coarse_level >= self.fine_level || self.fine_level > 14 {
            return Err(Error::InvalidConfig(format!(
                "need coarse level < fine level ≤ 14, got {} and {}",
                self.coarse_level, self.fine_level
            )));
        }
        if let Some(p) = self.parameter_level {
            if p < 2 || p > self.fine_level {
                return Err(Error::InvalidConfig(format!(
                    "parameter level must lie in [2, {}], got {p}",
                    self.fine_level
                )));
            }
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig("noise variance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn param_level(&self) -> u32 {
        self.parameter_level.unwrap_or(self.coarse_level)
    }

    /// `Γ = γ²I_J`.
    pub fn gamma(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(OBSERVATION_COUNT, OBSERVATION_COUNT, self.noise_var)
    }
}

pub(crate) fn interior_points(level: u32) -> usize {
    (1usize << level) - 1
}

/// Observation points `j/16`.
pub fn observation_points() -> Vec<f64> {
    (1..=OBSERVATION_COUNT).map(|j| j as f64 / 16.0).collect()
}

/// Linear interpolation from the parameter grid (level `param_level`) to solver nodes.
///
/// Solver nodes are parameter nodes when `solver_level ≤ param_level`, so the map is injection.
pub fn prolongation(param_level: u32, solver_level: u32) -> DMatrix<f64> {
    let kp = interior_points(param_level);
    let ks = interior_points(solver_level);
    let mut p = DMatrix::zeros(ks, kp);
    let scale = (1u64 << param_level) as f64;
    for i in 0..ks {
        let x = (i + 1) as f64 / (1u64 << solver_level) as f64;
        let t = x * scale;
        let k = t.floor() as usize;
        let frac = t - k as f64;
        if k >= kp {
            p[(i, kp - 1)] = 1.0;
        } else if k == 0 {
            p[(i, 0)] = frac;
        } else {
            p[(i, k - 1)] += 1.0 - frac;
            if frac > 0.0 {
                p[(i, k)] += frac;
            }
        }
    }
    p
}

/// Interpolation weights of each observation point on the interior nodes of a solver grid.
fn observation_weights(solver_level: u32) -> Vec<Vec<(usize, f64)>> {
    let n = 1usize << solver_level;
    observation_points()
        .into_iter()
        .map(|q| {
            let t = q * n as f64;
            let i = t.floor() as usize;
            let frac = t - i as f64;
            let mut w = Vec::with_capacity(2);
            // node i sits at x = i/n; nodes 0 and n are boundary nodes with p = 0
            if (1..n).contains(&i) && frac < 1.0 {
                w.push((i - 1, 1.0 - frac));
            }
            if frac > 0.0 && (1..n).contains(&(i + 1)) {
                w.push((i, frac));
            }
            w
        })
        .collect()
}

/// Solves `−p″ = source` with the 3-point stencil on `2^level − 1` interior nodes.
pub fn solve_on_level(level: u32, source: &[f64]) -> Result<Vec<f64>> {
    let k = interior_points(level);
    if source.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "source has length {}, grid has {k} nodes",
            source.len()
        )));
    }
    let h = 1.0 / (1u64 << level) as f64;
    let h2 = h * h;
    let rhs: Vec<f64> = source.iter().map(|s| s * h2).collect();
    solve_symmetric_tridiagonal(&vec![2.0; k], &vec![-1.0; k.saturating_sub(1)], &rhs)
}

/// Transfers `u` from the parameter grid, solves on `solver_level`, and observes.
pub fn poisson1d_forward(param_level: u32, solver_level: u32, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != interior_points(param_level) {
        return Err(Error::DimensionMismatch(format!(
            "parameter has length {}, expected {}",
            u.len(),
            interior_points(param_level)
        )));
    }
    let source = prolongation(param_level, solver_level) * u;
    let p = solve_on_level(solver_level, source.as_slice())?;
    Ok(DVector::from_iterator(
        OBSERVATION_COUNT,
        observation_weights(solver_level)
            .iter()
            .map(|w| w.iter().map(|(i, c)| c * p[*i]).sum()),
    ))
}

/// Assembles the J×K_P matrix of [`poisson1d_forward`] with one adjoint solve per observation.
pub fn assemble_operator(param_level: u32, solver_level: u32) -> Result<DMatrix<f64>> {
    let ks = interior_points(solver_level);
    let prolong = prolongation(param_level, solver_level);
    let weights = observation_weights(solver_level);
    let mut a = DMatrix::zeros(OBSERVATION_COUNT, prolong.ncols());
    for (j, w) in weights.iter().enumerate() {
        let mut rhs = vec![0.0; ks];
        for (i, c) in w {
            rhs[*i] = *c;
        }
        // the scaled operator is symmetric, so its adjoint solve reuses the forward solver
        let y = solve_on_level(solver_level, &rhs)?;
        let row = DVector::from_vec(y).transpose() * &prolong;
        a.row_mut(j).copy_from(&row);
    }
    Ok(a)
}

/// Fine/coarse pair for the inverse source problem, with assembled operators.
#[derive(Debug, Clone)]
pub struct Poisson1D {
    config: Poisson1DConfig,
    a_star: DMatrix<f64>,
    a_coarse: DMatrix<f64>,
}

impl Poisson1D {
    pub fn config(&self) -> &Poisson1DConfig {
        &self.config
    }

    pub fn param_level(&self) -> u32 {
        self.config.param_level()
    }

    /// `A★`: fine solve.
    pub fn a_star(&self) -> &DMatrix<f64> {
        &self.a_star
    }

    /// `A_n`: coarse solve.
    pub fn a_coarse(&self) -> &DMatrix<f64> {
        &self.a_coarse
    }

    /// `‖A_n − A★‖_F`.
    pub fn operator_gap(&self) -> f64 {
        (&self.a_coarse - &self.a_star).norm()
    }
}

impl ForwardModelPair for Poisson1D {
    fn param_dim(&self) -> usize {
        interior_points(self.param_level())
    }

    fn data_dim(&self) -> usize {
        OBSERVATION_COUNT
    }

    fn accurate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        poisson1d_forward(self.param_level(), self.config.fine_level, u)
    }

    fn approximate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        poisson1d_forward(self.param_level(), self.config.coarse_level, u)
    }

    fn approximate_affine(&self) -> Option<AffineMap> {
        Some(AffineMap::linear(self.a_coarse.clone()))
    }

    fn label(&self) -> String {
        format!(
            "poisson1d fine={} coarse={} param={}",
            self.config.fine_level,
            self.config.coarse_level,
            self.param_level()
        )
    }

    fn relative_cost(&self) -> f64 {
        (1u64 << (self.config.fine_level - self.config.coarse_level)) as f64
    }
}

pub fn poisson1d_pair(config: &Poisson1DConfig) -> Result<Poisson1D> {
    config.validate()?;
    let pl = config.param_level();
    Ok(Poisson1D {
        config: config.clone(),
        a_star: assemble_operator(pl, config.fine_level)?,
        a_coarse: assemble_operator(pl, config.coarse_level)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_source_gives_zero_data() {
        let pair = poisson1d_pair(&Poisson1DConfig::with_coarse_level(4)).unwrap();
        let y = pair.accurate(&DVector::zeros(pair.param_dim())).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_source_matches_parabola() {
        let u = DVector::from_element(interior_points(10), 1.0);
        let y = poisson1d_forward(10, 10, &u).unwrap();
        for (j, q) in observation_points().iter().enumerate() {
            let exact = q * (1.0 - q) / 2.0;
            assert!((y[j] - exact).abs() < 1e-5, "q={q}: {} vs {exact}", y[j]);
        }
    }

    #[test]
    fn assembled_operator_matches_direct_solve() {
        let pair = poisson1d_pair(&Poisson1DConfig::with_coarse_level(5)).unwrap();
        let u = DVector::from_fn(pair.param_dim(), |i, _| ((i as f64) * 0.37).sin() + 0.2);
        let direct_f = pair.accurate(&u).unwrap();
        let direct_c = pair.approximate(&u).unwrap();
        let scale = direct_f.amax();
        assert!((pair.a_star() * &u - direct_f).amax() < 1e-12 * scale);
        assert!((pair.a_coarse() * &u - direct_c).amax() < 1e-12 * scale);
    }

    #[test]
    fn level_three_uses_interpolated_observations() {
        let u = DVector::from_element(interior_points(3), 1.0);
        let y = poisson1d_forward(3, 3, &u).unwrap();
        // the coarse solution is exact at nodes; odd q_j fall midway between nodes
        let q = 1.0 / 16.0;
        let nodes = (0.0, 0.125 * 0.875 / 2.0);
        assert!((y[0] - 0.5 * (nodes.0 + nodes.1)).abs() < 1e-14);
        assert!((y[1] - nodes.1).abs() < 1e-14);
        assert!(y[0] < q * (1.0 - q) / 2.0 + 1e-3);
    }

    #[test]
    fn prolongation_pins_left_and_extends_right() {
        let p = prolongation(2, 3);
        // param nodes at 1/4, 2/4, 3/4; solver nodes at k/8
        assert_eq!(p[(0, 0)], 0.5);
        assert_eq!(p[(1, 0)], 1.0);
        assert_eq!(p[(2, 0)], 0.5);
        assert_eq!(p[(2, 1)], 0.5);
        assert_eq!(p[(6, 2)], 1.0);
        for i in 0..7 {
            assert!((p.row(i).sum() - if i == 0 { 0.5 } else { 1.0 }).abs() < 1e-15);
        }
    }

    #[test]
    fn coarse_solver_injects_fine_parameters() {
        let p = prolongation(4, 2);
        // solver nodes 1/4, 2/4, 3/4 are parameter nodes 4, 8, 12
        for (i, k) in [(0, 3), (1, 7), (2, 11)] {
            assert_eq!(p[(i, k)], 1.0);
            assert_eq!(p.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn fine_parameter_grid_is_shared_by_both_solvers() {
        let config = Poisson1DConfig {
            parameter_level: Some(10),
            ..Poisson1DConfig::with_coarse_level(4)
        };
        let pair = poisson1d_pair(&config).unwrap();
        assert_eq!(pair.param_dim(), 1023);
        let u = DVector::from_element(1023, 1.0);
        let exact = poisson1d_forward(4, 4, &DVector::from_element(15, 1.0)).unwrap();
        assert!((pair.approximate(&u).unwrap() - exact).amax() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_levels() {
        let too_fine = Poisson1DConfig {
            parameter_level: Some(11),
            ..Poisson1DConfig::default()
        };
        assert!(poisson1d_pair(&too_fine).is_err());
        assert!(poisson1d_pair(&Poisson1DConfig::with_coarse_level(2)).is_err());
        assert!(poisson1d_pair(&Poisson1DConfig::with_coarse_level(10)).is_err());
    }
}
