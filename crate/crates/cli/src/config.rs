//! Experiment configuration.
//!
//! Files are TOML with one table per experiment; every field has a default, so a file
//! only lists what it changes. Named presets stand in for a file path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PRESETS: [&str; 4] = [
    "paper-source1d",
    "paper-darcy-noise1",
    "paper-darcy-noise2",
    "paper-darcy-noise3",
];

pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source1d: Source1dConfig,
    pub darcy: DarcyConfig,
    pub rates: RatesConfig,
    pub toy: ToyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            source1d: Source1dConfig::default(),
            darcy: DarcyConfig::default(),
            rates: RatesConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Source1dConfig {
    pub levels: Vec<u32>,
    pub fine_level: u32,
    /// Parameter grid level shared by both solvers.
    pub parameter_level: u32,
    pub noise_var: f64,
    pub iterations: usize,
}

impl Default for Source1dConfig {
    fn default() -> Self {
        Self {
            levels: (4..=9).collect(),
            fine_level: 10,
            parameter_level: 10,
            noise_var: 1e-8,
            iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarcyConfig {
    pub fine_cells: usize,
    pub coarse_cells: usize,
    pub noise_index: u32,
    pub particles: usize,
    pub iterations: usize,
    pub n_err: usize,
    pub lambda: f64,
    pub zeta: f64,
    pub source_amplitude: f64,
    pub obs_width: f64,
    /// Truth bumps; nonauthoritative visual match.
    pub truth_centres: [[f64; 2]; 2],
    pub truth_widths: [f64; 2],
    pub truth_amplitudes: [f64; 2],
}

impl Default for DarcyConfig {
    fn default() -> Self {
        let t = moderr::models::TwoBumpTruth::default();
        Self {
            fine_cells: 128,
            coarse_cells: 64,
            noise_index: 2,
            particles: 100,
            iterations: 10,
            n_err: 1500,
            lambda: 0.1,
            zeta: 1.0,
            source_amplitude: 100.0,
            obs_width: 0.02,
            truth_centres: [[t.centres[0].0, t.centres[0].1], [t.centres[1].0, t.centres[1].1]],
            truth_widths: t.widths,
            truth_amplitudes: t.amplitudes,
        }
    }
}

impl DarcyConfig {
    /// 32×32 parameters, 64×64 accurate solver, 50 particles.
    pub fn small(mut self) -> Self {
        self.fine_cells = 64;
        self.coarse_cells = 32;
        self.particles = 50;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub deltas: Vec<f64>,
    pub param_dim: usize,
    pub data_dim: usize,
    pub iterations: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            param_dim: 6,
            data_dim: 4,
            iterations: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub particle_counts: Vec<usize>,
    pub replicates: usize,
    pub generation: usize,
    pub kappa: f64,
    pub noise_std: f64,
    pub grid_points: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            particle_counts: vec![250, 1000, 4000, 16000],
            replicates: 24,
            generation: 2,
            kappa: 0.3,
            noise_std: 0.5,
            grid_points: 4001,
        }
    }
}

impl ExperimentConfig {
    /// A preset name or a path to a TOML file.
    pub fn load(source: &str) -> Result<Self, CliError> {
        if let Some(cfg) = Self::preset(source) {
            return Ok(cfg);
        }
        let path = Path::new(source);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn preset(name: &str) -> Option<Self> {
        let mut cfg = Self::default();
        match name {
            "paper-source1d" => {}
            "paper-darcy-noise1" => cfg.darcy.noise_index = 1,
            "paper-darcy-noise2" => cfg.darcy.noise_index = 2,
            "paper-darcy-noise3" => cfg.darcy.noise_index = 3,
            _ => return None,
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.source1d;
        if s.levels.is_empty() || s.iterations == 0 || !(s.noise_var > 0.0) {
            return Err(CliError::Config("source1d needs levels, iterations ≥ 1 and positive noise".into()));
        }
        for &n in &s.levels {
            moderr::models::Poisson1DConfig {
                fine_level: s.fine_level,
                coarse_level: n,
                parameter_level: Some(s.parameter_level),
                noise_var: s.noise_var,
            }
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let d = &self.darcy;
        if d.particles == 0 || d.iterations == 0 || d.n_err < 2 || !(d.lambda > 0.0) || !(d.zeta > 0.0) {
            return Err(CliError::Config(
                "darcy needs particles ≥ 1, iterations ≥ 1, n_err ≥ 2 and positive λ, ζ".into(),
            ));
        }
        self.darcy_model()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let r = &self.rates;
        if r.deltas.is_empty() || r.deltas.iter().any(|x| !(*x >= 0.0)) || r.param_dim == 0 || r.data_dim == 0 || r.iterations < 3 {
            return Err(CliError::Config("rates needs nonnegative deltas, positive dimensions and ≥ 3 iterations".into()));
        }
        let t = &self.toy;
        if t.particle_counts.len() < 2 || t.replicates < 2 || !(t.kappa > 0.0 && t.kappa <= 1.0) || !(t.noise_std > 0.0) || t.grid_points < 101 || t.generation == 0 {
            return Err(CliError::Config(
                "toy needs ≥ 2 particle counts, ≥ 2 replicates, κ ∈ (0,1], positive noise, ≥ 101 grid points and generation ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn darcy_model(&self) -> moderr::models::Darcy2DConfig {
        let d = &self.darcy;
        moderr::models::Darcy2DConfig {
            fine_cells: d.fine_cells,
            coarse_cells: d.coarse_cells,
            source_amplitude: d.source_amplitude,
            obs_width: d.obs_width,
            obs_per_axis: 5,
            noise_index: d.noise_index,
            truth: moderr::models::TwoBumpTruth {
                centres: [
                    (d.truth_centres[0][0], d.truth_centres[0][1]),
                    (d.truth_centres[1][0], d.truth_centres[1][1]),
                ],
                widths: d.truth_widths,
                amplitudes: d.truth_amplitudes,
            },
        }
    }
}
