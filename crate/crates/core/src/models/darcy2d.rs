//! Steady Darcy flow `−∇·(eᵘ∇p) = g` on the unit square with `p = 0` on the boundary.
//!
//! Cell-centred finite volumes on an `n×n` grid: unknowns sit at cell centres,
//! interior faces use the harmonic mean of the two cell permeabilities and boundary
//! faces use the half-cell distance to the wall. Cell `(i, j)` (column `i` along x₁,
//! row `j` along x₂) has index `k = j·n + i`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{AffineMap, ForwardModelPair};
use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, BandedSpd};

/// Uniform `n×n` cell grid on (0,1)².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DarcyGrid {
    pub n: usize,
}

impl DarcyGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("Darcy grid needs at least 2 cells per side, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Centre of cell `k`.
    pub fn centre(&self, k: usize) -> (f64, f64) {
        let h = self.spacing();
        ((((k % self.n) as f64) + 0.5) * h, (((k / self.n) as f64) + 0.5) * h)
    }

    /// `f` sampled at every cell centre.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> DVector<f64> {
        DVector::from_iterator(self.cells(), (0..self.cells()).map(|k| {
            let (x, y) = self.centre(k);
            f(x, y)
        }))
    }
}

/// Log-permeability made of two isotropic Gaussian bumps.
///
/// The defaults are a visual match to a published figure, not authoritative values.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBumpTruth {
    pub centres: [(f64, f64); 2],
    pub widths: [f64; 2],
    pub amplitudes: [f64; 2],
}

impl Default for TwoBumpTruth {
    fn default() -> Self {
        Self {
            centres: [(0.3, 0.35), (0.7, 0.65)],
            widths: [0.1, 0.1],
            amplitudes: [1.0, 0.8],
        }
    }
}

impl TwoBumpTruth {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        (0..2)
            .map(|b| {
                let (cx, cy) = self.centres[b];
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                self.amplitudes[b] * (-r2 / (2.0 * self.widths[b].powi(2))).exp()
            })
            .sum()
    }

    pub fn field(&self, grid: &DarcyGrid) -> DVector<f64> {
        grid.sample(|x, y| self.value(x, y))
    }
}

/// Configuration of the Darcy experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Darcy2DConfig {
    /// Cells per side of the accurate solver grid.
    pub fine_cells: usize,
    /// Cells per side of the approximate solver grid; also the parameter grid.
    pub coarse_cells: usize,
    /// `g(x₁,x₂) = amplitude · sin(πx₁) sin(πx₂)`.
    pub source_amplitude: f64,
    /// Mollifier width `ε` of the observation functionals.
    pub obs_width: f64,
    /// Observation points are `(a/(k+1), b/(k+1))` for `a, b = 1…k`.
    pub obs_per_axis: usize,
    /// Noise level `i ∈ {1,2,3}`: standard deviation `10^{−i−1}`.
    pub noise_index: u32,
    pub truth: TwoBumpTruth,
}

impl Default for Darcy2DConfig {
    fn default() -> Self {
        Self {
            fine_cells: 128,
            coarse_cells: 64,
            source_amplitude: 100.0,
            obs_width: 0.02,
            obs_per_axis: 5,
            noise_index: 2,
            truth: TwoBumpTruth::default(),
        }
    }
}

impl Darcy2DConfig {
    /// 32×32 parameter grid with a 64×64 accurate solver.
    pub fn small() -> Self {
        Self {
            fine_cells: 64,
            coarse_cells: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_cells < 2 || self.fine_cells < self.coarse_cells {
            return Err(Error::InvalidConfig(format!(
                "need 2 ≤ coarse_cells ≤ fine_cells, got {} and {}",
                self.coarse_cells, self.fine_cells
            )));
        }
        if !self.fine_cells.is_multiple_of(self.coarse_cells) {
            return Err(Error::InvalidConfig(format!(
                "coarse grid {} must divide fine grid {}",
                self.coarse_cells, self.fine_cells
            )));
        }
        if !(self.obs_width > 0.0) || !self.source_amplitude.is_finite() {
            return Err(Error::InvalidConfig("observation width must be positive and source finite".into()));
        }
        if self.obs_per_axis == 0 {
            return Err(Error::InvalidConfig("need at least one observation point".into()));
        }
        if !(1..=3).contains(&self.noise_index) {
            return Err(Error::InvalidConfig(format!(
                "noise index must be 1, 2 or 3, got {}",
                self.noise_index
            )));
        }
        Ok(())
    }

    pub fn fine_grid(&self) -> DarcyGrid {
        DarcyGrid { n: self.fine_cells }
    }

    pub fn coarse_grid(&self) -> DarcyGrid {
        DarcyGrid { n: self.coarse_cells }
    }

    pub fn source(&self, x: f64, y: f64) -> f64 {
        self.source_amplitude * (PI * x).sin() * (PI * y).sin()
    }

    pub fn observation_points(&self) -> Vec<(f64, f64)> {
        let k = self.obs_per_axis;
        let s = 1.0 / (k + 1) as f64;
        (1..=k)
            .flat_map(|b| (1..=k).map(move |a| (a as f64 * s, b as f64 * s)))
            .collect()
    }

    pub fn data_dim(&self) -> usize {
        self.obs_per_axis * self.obs_per_axis
    }

    pub fn noise_std(&self) -> f64 {
        10f64.powi(-(self.noise_index as i32) - 1)
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        let s = self.noise_std();
        DMatrix::identity(self.data_dim(), self.data_dim()) * (s * s)
    }
}

/// Assembled and factored operator for one permeability field.
struct DarcySystem {
    grid: DarcyGrid,
    kappa: Vec<f64>,
    factor: BandedCholesky,
}

impl DarcySystem {
    fn new(u: &DVector<f64>, grid: &DarcyGrid) -> Result<Self> {
        if u.len() != grid.cells() {
            return Err(Error::DimensionMismatch(format!(
                "log-permeability has {} entries, grid has {} cells",
                u.len(),
                grid.cells()
            )));
        }
        let kappa: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        if let Some(k) = kappa.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::SolverBreakdown(format!(
                "permeability at cell {k} is {} (log value {})",
                kappa[k], u[k]
            )));
        }
        let n = grid.n;
        let mut op = BandedSpd::zeros(grid.cells(), n);
        for_each_face(n, |face| match face {
            Face::Interior(a, b) => {
                let t = 2.0 * kappa[a] * kappa[b] / (kappa[a] + kappa[b]);
                op.add(a, a, t);
                op.add(b, b, t);
                op.add(a, b, -t);
            }
            Face::Boundary(c) => op.add(c, c, 2.0 * kappa[c]),
        });
        let factor = op.factor()?;
        Ok(Self {
            grid: *grid,
            kappa,
            factor,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }

    /// `λᵀ (∂K/∂u) p` for every cell, i.e. the gradient of `λᵀK(u)p` with `λ, p` fixed.
    fn bilinear_gradient(&self, lambda: &[f64], p: &[f64]) -> Vec<f64> {
        let k = &self.kappa;
        let mut g = vec![0.0; self.grid.cells()];
        for_each_face(self.grid.n, |face| match face {
            Face::Interior(a, b) => {
                let s = (k[a] + k[b]).powi(2);
                let jump = (lambda[a] - lambda[b]) * (p[a] - p[b]);
                g[a] += k[a] * 2.0 * k[b] * k[b] / s * jump;
                g[b] += k[b] * 2.0 * k[a] * k[a] / s * jump;
            }
            Face::Boundary(c) => g[c] += 2.0 * k[c] * lambda[c] * p[c],
        });
        g
    }
}

enum Face {
    Interior(usize, usize),
    Boundary(usize),
}

fn for_each_face<F: FnMut(Face)>(n: usize, mut visit: F) {
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            if i + 1 < n {
                visit(Face::Interior(k, k + 1));
            }
            if j + 1 < n {
                visit(Face::Interior(k, k + n));
            }
            if i == 0 {
                visit(Face::Boundary(k));
            }
            if i + 1 == n {
                visit(Face::Boundary(k));
            }
            if j == 0 {
                visit(Face::Boundary(k));
            }
            if j + 1 == n {
                visit(Face::Boundary(k));
            }
        }
    }
}

fn load_vector<G: Fn(f64, f64) -> f64>(grid: &DarcyGrid, g: &G) -> Vec<f64> {
    let h2 = grid.spacing().powi(2);
    grid.sample(|x, y| g(x, y) * h2).as_slice().to_vec()
}

/// Pressure at cell centres for log-permeability `u` and source `g`.
pub fn darcy2d_solve<G: Fn(f64, f64) -> f64>(
    u: &DVector<f64>,
    grid: &DarcyGrid,
    g: G,
) -> Result<DVector<f64>> {
    let system = DarcySystem::new(u, grid)?;
    Ok(DVector::from_vec(system.solve(&load_vector(grid, &g))))
}

/// Midpoint-rule weights of the observation functionals, one row per point.
///
/// `O_j(p) = (1/(2πε)) ∫ p(x) exp(−|x − q_j|²/(2ε²)) dx` with the prefactor taken literally.
fn observation_matrix(grid: &DarcyGrid, config: &Darcy2DConfig) -> DMatrix<f64> {
    let points = config.observation_points();
    let eps = config.obs_width;
    let h2 = grid.spacing().powi(2);
    let pre = h2 / (2.0 * PI * eps);
    DMatrix::from_fn(points.len(), grid.cells(), |j, k| {
        let (qx, qy) = points[j];
        let (x, y) = grid.centre(k);
        pre * (-((x - qx).powi(2) + (y - qy).powi(2)) / (2.0 * eps * eps)).exp()
    })
}

/// Observation vector of a pressure field on `grid`.
pub fn darcy2d_observe(p: &DVector<f64>, grid: &DarcyGrid, config: &Darcy2DConfig) -> Result<DVector<f64>> {
    if p.len() != grid.cells() {
        return Err(Error::DimensionMismatch(format!(
            "pressure has {} entries, grid has {} cells",
            p.len(),
            grid.cells()
        )));
    }
    Ok(observation_matrix(grid, config) * p)
}

/// `F(u₀)` and `DF(u₀)` on one grid.
#[derive(Debug, Clone)]
pub struct DarcyLinearization {
    pub baseline: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// PDE solves used: one forward plus one adjoint per observation.
    pub pde_solves: usize,
}

impl DarcyLinearization {
    pub fn affine_map(&self, u0: &DVector<f64>) -> AffineMap {
        AffineMap {
            offset: &self.baseline - &self.jacobian * u0,
            matrix: self.jacobian.clone(),
        }
    }
}

/// Adjoint linearization of `u ↦ O(p(u))` at `u0`.
///
/// With `K(u)p = r` and `Kλ_j = O_jᵀ`, row `j` of the Jacobian is `−λ_jᵀ(∂K/∂u)p`.
pub fn darcy2d_linearize(
    u0: &DVector<f64>,
    grid: &DarcyGrid,
    config: &Darcy2DConfig,
) -> Result<DarcyLinearization> {
    let system = DarcySystem::new(u0, grid)?;
    let obs = observation_matrix(grid, config);
    let solves = AtomicUsize::new(0);
    let p = system.solve(&load_vector(grid, &|x, y| config.source(x, y)));
    solves.fetch_add(1, Ordering::Relaxed);
    let baseline = &obs * DVector::from_column_slice(&p);
    let rows: Vec<Vec<f64>> = (0..obs.nrows())
        .into_par_iter()
        .map(|j| {
            let rhs: Vec<f64> = obs.row(j).iter().copied().collect();
            let lambda = system.solve(&rhs);
            solves.fetch_add(1, Ordering::Relaxed);
            system.bilinear_gradient(&lambda, &p).into_iter().map(|v| -v).collect()
        })
        .collect();
    let jacobian = DMatrix::from_fn(rows.len(), grid.cells(), |j, k| rows[j][k]);
    Ok(DarcyLinearization {
        baseline,
        jacobian,
        pde_solves: solves.into_inner(),
    })
}

/// Bilinear interpolation between cell-centred grids, constant beyond the outer centres.
pub fn prolong_cells(u: &DVector<f64>, coarse: &DarcyGrid, fine: &DarcyGrid) -> Result<DVector<f64>> {
    if u.len() != coarse.cells() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} entries, coarse grid has {} cells",
            u.len(),
            coarse.cells()
        )));
    }
    let nc = coarse.n;
    let locate = |x: f64| -> (usize, usize, f64) {
        let s = (x * nc as f64 - 0.5).clamp(0.0, (nc - 1) as f64);
        let lo = (s.floor() as usize).min(nc - 1);
        let hi = (lo + 1).min(nc - 1);
        (lo, hi, s - lo as f64)
    };
    Ok(DVector::from_iterator(fine.cells(), (0..fine.cells()).map(|k| {
        let (x, y) = fine.centre(k);
        let (i0, i1, tx) = locate(x);
        let (j0, j1, ty) = locate(y);
        let at = |i: usize, j: usize| u[j * nc + i];
        (1.0 - ty) * ((1.0 - tx) * at(i0, j0) + tx * at(i1, j0))
            + ty * ((1.0 - tx) * at(i0, j1) + tx * at(i1, j1))
    })))
}

/// Accurate map: prolong to the fine grid, solve, observe.
/// Approximate map: the coarse-grid linearization at `u₀ = 0`.
pub struct Darcy2DPair {
    config: Darcy2DConfig,
    fine: DarcyGrid,
    coarse: DarcyGrid,
    fine_obs: DMatrix<f64>,
    fine_load: Vec<f64>,
    linearization: DarcyLinearization,
    approx: AffineMap,
    fine_solves: AtomicUsize,
}

impl std::fmt::Debug for Darcy2DPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Darcy2DPair")
            .field("fine", &self.fine)
            .field("coarse", &self.coarse)
            .finish_non_exhaustive()
    }
}

pub fn darcy2d_pair(config: &Darcy2DConfig) -> Result<Darcy2DPair> {
    config.validate()?;
    let fine = config.fine_grid();
    let coarse = config.coarse_grid();
    let u0 = DVector::zeros(coarse.cells());
    let linearization = darcy2d_linearize(&u0, &coarse, config)?;
    let approx = linearization.affine_map(&u0);
    Ok(Darcy2DPair {
        config: config.clone(),
        fine,
        coarse,
        fine_obs: observation_matrix(&fine, config),
        fine_load: load_vector(&fine, &|x, y| config.source(x, y)),
        linearization,
        approx,
        fine_solves: AtomicUsize::new(0),
    })
}

impl Darcy2DPair {
    pub fn config(&self) -> &Darcy2DConfig {
        &self.config
    }

    pub fn coarse_grid(&self) -> &DarcyGrid {
        &self.coarse
    }

    pub fn fine_grid(&self) -> &DarcyGrid {
        &self.fine
    }

    pub fn linearization(&self) -> &DarcyLinearization {
        &self.linearization
    }

    /// Accurate-grid PDE solves performed so far.
    pub fn fine_solves(&self) -> usize {
        self.fine_solves.load(Ordering::Relaxed)
    }

    /// The nonlinear map on the coarse grid, without linearization.
    pub fn coarse_forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = darcy2d_solve(u, &self.coarse, |x, y| self.config.source(x, y))?;
        darcy2d_observe(&p, &self.coarse, &self.config)
    }

    /// The truth field on the parameter grid.
    pub fn truth(&self) -> DVector<f64> {
        self.config.truth.field(&self.coarse)
    }
}

impl ForwardModelPair for Darcy2DPair {
    fn param_dim(&self) -> usize {
        self.coarse.cells()
    }

    fn data_dim(&self) -> usize {
        self.config.data_dim()
    }

    fn accurate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let fine_u = prolong_cells(u, &self.coarse, &self.fine)?;
        let system = DarcySystem::new(&fine_u, &self.fine)?;
        self.fine_solves.fetch_add(1, Ordering::Relaxed);
        let p = system.solve(&self.fine_load);
        Ok(&self.fine_obs * DVector::from_vec(p))
    }

    fn approximate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.coarse.cells() {
            return Err(Error::DimensionMismatch(format!(
                "parameter has {} entries, expected {}",
                u.len(),
                self.coarse.cells()
            )));
        }
        Ok(self.approx.apply(u))
    }

    fn approximate_affine(&self) -> Option<AffineMap> {
        Some(self.approx.clone())
    }

    fn label(&self) -> String {
        format!(
            "darcy {}x{} accurate, {}x{} linearized",
            self.fine.n, self.fine.n, self.coarse.n, self.coarse.n
        )
    }

    fn relative_cost(&self) -> f64 {
        // banded solve n²·n² against a dense J×d product
        let nf = self.fine.n as f64;
        nf.powi(4) / (self.data_dim() as f64 * self.coarse.cells() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_solution_matches_eigenfunction() {
        let cfg = Darcy2DConfig::default();
        let grid = DarcyGrid::new(64).unwrap();
        let p = darcy2d_solve(&DVector::zeros(grid.cells()), &grid, |x, y| cfg.source(x, y)).unwrap();
        let exact = grid.sample(|x, y| 100.0 / (2.0 * PI * PI) * (PI * x).sin() * (PI * y).sin());
        assert!((p - exact).amax() < 1e-2);
    }

    #[test]
    fn constant_pressure_observes_width() {
        let cfg = Darcy2DConfig::default();
        let grid = DarcyGrid::new(128).unwrap();
        let obs = darcy2d_observe(&DVector::from_element(grid.cells(), 1.0), &grid, &cfg).unwrap();
        for v in obs.iter() {
            assert!((v - 0.02).abs() < 0.01 * 0.02, "{v}");
        }
    }

    #[test]
    fn prolongation_preserves_constants_and_planes() {
        let coarse = DarcyGrid::new(4).unwrap();
        let fine = DarcyGrid::new(8).unwrap();
        let c = prolong_cells(&DVector::from_element(16, 2.5), &coarse, &fine).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-15));
        let plane = coarse.sample(|x, y| x + 2.0 * y);
        let p = prolong_cells(&plane, &coarse, &fine).unwrap();
        // interior fine cells lie between coarse centres, where bilinear is exact
        for k in 0..fine.cells() {
            let (x, y) = fine.centre(k);
            if (0.125..=0.875).contains(&x) && (0.125..=0.875).contains(&y) {
                assert!((p[k] - (x + 2.0 * y)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linearization_uses_one_solve_per_observation_plus_one() {
        let cfg = Darcy2DConfig::default();
        let grid = DarcyGrid::new(8).unwrap();
        let lin = darcy2d_linearize(&DVector::zeros(64), &grid, &cfg).unwrap();
        assert_eq!(lin.pde_solves, 26);
        assert_eq!(lin.jacobian.shape(), (25, 64));
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let grid = DarcyGrid::new(4).unwrap();
        let mut u = DVector::zeros(16);
        u[3] = f64::NAN;
        assert!(matches!(
            darcy2d_solve(&u, &grid, |_, _| 1.0),
            Err(Error::SolverBreakdown(_))
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = Darcy2DConfig {
            fine_cells: 100,
            ..Darcy2DConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = Darcy2DConfig {
            noise_index: 4,
            ..Darcy2DConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(Darcy2DConfig::small().validate().is_ok());
    }
}
