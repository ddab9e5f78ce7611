//! Run defaults. Every field can come from a JSON file; missing fields keep
//! these values.

use narrowfront::channel::GeneratorParams;
use narrowfront::ldp::geometric_grid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorParams,
    pub seed: u64,
    /// Cells per side when generating.
    pub cells: usize,
    pub fprime: f64,
    /// `λ` grid: `-hi .. -lo` geometric with `n` points, plus 0.
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_n: usize,
    /// Cells averaged per `μ(λ)` value.
    pub ldp_cells: usize,
    pub pde: Pde,
    pub two_d: TwoD,
    pub mc: Mc,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generator: GeneratorParams::default(),
            seed: 0,
            cells: 200,
            fprime: 1.0,
            lambda_lo: 1e-4,
            lambda_hi: 10.0,
            lambda_n: 60,
            ldp_cells: 1000,
            pde: Pde::default(),
            two_d: TwoD::default(),
            mc: Mc::default(),
        }
    }
}

impl RunConfig {
    pub fn lambda_grid(&self) -> Vec<f64> {
        geometric_grid(self.lambda_lo, self.lambda_hi, self.lambda_n)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pde {
    pub dx: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
}

impl Default for Pde {
    fn default() -> Self {
        Pde { dx: 0.05, t_end: 40.0, snapshot_every: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoD {
    pub dx: f64,
    pub dz: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub eps: Vec<f64>,
    pub shear: f64,
}

impl Default for TwoD {
    fn default() -> Self {
        TwoD { dx: 0.0625, dz: 0.0625, t_end: 2.0, snapshot_every: 0.25, eps: vec![0.4, 0.2, 0.1], shear: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mc {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub paths: usize,
    pub cells: usize,
    pub lambdas: Vec<f64>,
    pub max_censoring: f64,
}

impl Default for Mc {
    fn default() -> Self {
        Mc { dt: 1e-3, horizon: 40.0, seed: 0, paths: 2000, cells: 20, lambdas: vec![-0.25, -0.5, -1.0], max_censoring: 0.6 }
    }
}

/// Initial profile `½(1 + cos(πx/2))` on `|x| < 2`.
pub fn initial(x: f64) -> f64 {
    if x.abs() < 2.0 {
        0.5 * (1.0 + (std::f64::consts::PI * x / 2.0).cos())
    } else {
        0.0
    }
}
