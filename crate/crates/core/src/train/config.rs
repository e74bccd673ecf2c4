use serde::{Deserialize, Serialize};

use super::schedule::OneCycle;
use crate::error::{Error, Result};
use crate::network::PerturbationConfig;

/// How the Jensen–Shannon term is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsdClip {
    /// `max(tau - D, 0)`: zero once the two predictions differ by `tau`.
    #[default]
    Hinge,
    /// `-min(D, tau)`: the same gradient, offset by `tau`.
    Cap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub anchor_steps: usize,
    pub curve_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub schedule: OneCycle,
    pub lambda_jsd: f64,
    pub tau_jsd: f64,
    pub jsd_clip: JsdClip,
    pub perturbation: PerturbationConfig,
    /// Weight of the squared-cosine repulsion between control points; 0 disables it.
    pub repulsive_weight: f64,
    pub val_fraction: f64,
    /// Validation interval in optimizer steps.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    /// `A` is drawn with standard deviation `a_init_scale / sqrt(d_in)`.
    pub a_init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            anchor_steps: 500,
            curve_steps: 1000,
            batch_size: 32,
            weight_decay: 0.001,
            schedule: OneCycle::desk(),
            lambda_jsd: 0.2,
            tau_jsd: 0.05,
            jsd_clip: JsdClip::Hinge,
            perturbation: PerturbationConfig::default(),
            repulsive_weight: 0.0,
            val_fraction: 0.10,
            eval_every: 50,
            patience: Some(10),
            a_init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Step counts, batch size and peak learning rate of the full-size runs.
    pub fn paper_scale(self) -> Self {
        Self {
            anchor_steps: 5000,
            curve_steps: 10_000,
            batch_size: 4,
            schedule: OneCycle::default(),
            ..self
        }
    }

    /// No diversity term, no weight noise.
    pub fn plain(self) -> Self {
        Self {
            lambda_jsd: 0.0,
            perturbation: PerturbationConfig {
                rho: 0.0,
                ..self.perturbation
            },
            ..self
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.perturbation.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        for (name, v) in [
            ("lambda_jsd", self.lambda_jsd),
            ("tau_jsd", self.tau_jsd),
            ("weight_decay", self.weight_decay),
            ("repulsive_weight", self.repulsive_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        if !(self.a_init_scale > 0.0) {
            return Err(Error::config("a_init_scale must be positive"));
        }
        Ok(())
    }
}
