//! Row-norm-scaled Gaussian weight perturbation.
//!
//! Entry `(i, j)` of the perturbation of an adapted matrix `W'` is drawn from
//! `N(0, rho / d_in * ||W'_i||^2)`. A [`NoiseDraw`] keeps the standard-normal
//! part fixed so a draw can be held across optimizer steps and rescaled to
//! whatever `W'` is current.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{EffectiveWeights, LoraNetwork};
use crate::error::{Error, Result};

/// Default perturbation magnitude.
pub const DEFAULT_RHO: f64 = 0.25;
/// Default number of optimizer steps between fresh noise draws.
pub const DEFAULT_RESAMPLE_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub rho: f64,
    pub resample_every: usize,
    /// Ramp `rho` linearly from zero over the learning-rate warm-up.
    #[serde(default)]
    pub warmup: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            resample_every: DEFAULT_RESAMPLE_EVERY,
            warmup: false,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::config(format!("rho must be a finite non-negative number, got {}", self.rho)));
        }
        if self.resample_every == 0 {
            return Err(Error::config("resample_every must be positive"));
        }
        Ok(())
    }
}

/// Standard-normal matrices, one per adapter site.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    z: Vec<Array2<f64>>,
}

impl NoiseDraw {
    pub fn sample<R: Rng>(net: &LoraNetwork, rng: &mut R) -> Self {
        let z = net
            .layout()
            .sites()
            .iter()
            .map(|s| {
                Array2::from_shape_simple_fn((s.d_out, s.d_in), || StandardNormal.sample(&mut *rng))
            })
            .collect();
        Self { z }
    }

    /// Perturbations for the given effective weights.
    pub fn scale(&self, net: &LoraNetwork, weights: &EffectiveWeights, rho: f64) -> Vec<Array2<f64>> {
        net.layout()
            .sites()
            .iter()
            .zip(&self.z)
            .map(|(site, z)| {
                let w = weights.site(site.kind);
                let mut eps = z.clone();
                if rho == 0.0 {
                    eps.fill(0.0);
                    return eps;
                }
                let factor = rho / site.d_in as f64;
                Zip::from(eps.rows_mut()).and(w.rows()).for_each(|mut row, w_row| {
                    let std = (factor * w_row.dot(&w_row)).sqrt();
                    row.mapv_inplace(|x| x * std);
                });
                eps
            })
            .collect()
    }
}

/// One fresh perturbation for `weights`.
pub fn sample_flat_noise<R: Rng>(
    net: &LoraNetwork,
    weights: &EffectiveWeights,
    rho: f64,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    if !(rho >= 0.0) {
        return Err(Error::domain(format!("rho must be non-negative, got {rho}")));
    }
    Ok(NoiseDraw::sample(net, rng).scale(net, weights, rho))
}
