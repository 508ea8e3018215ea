use serde::{Deserialize, Serialize};

use super::EdmConfig;
use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 7.0;
pub const DEFAULT_STEPS: usize = 35;

/// Descending noise levels ending in a terminal zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigmas: Vec<f64>,
    pub rho: f64,
}

impl NoiseSchedule {
    /// Number of sampler steps (levels excluding the terminal zero).
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }
}

/// Karras schedule: `steps` levels interpolated linearly in `σ^(1/ρ)` from
/// `σ_max` to `σ_min`, followed by `0`. Endpoints are exact.
pub fn karras_schedule(cfg: &EdmConfig, steps: usize, rho: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("steps", "need at least one step"));
    }
    if !(rho > 0.0) {
        return Err(Error::config("rho", "must be positive"));
    }
    let (lo, hi) = (cfg.sigma_min.powf(1.0 / rho), cfg.sigma_max.powf(1.0 / rho));
    let mut sigmas: Vec<f64> = (0..steps)
        .map(|i| {
            let t = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            (hi + t * (lo - hi)).powf(rho)
        })
        .collect();
    sigmas[0] = cfg.sigma_max;
    if steps > 1 {
        sigmas[steps - 1] = cfg.sigma_min;
    }
    sigmas.push(0.0);
    Ok(NoiseSchedule { sigmas, rho })
}
