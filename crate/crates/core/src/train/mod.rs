//! Anchor and curve training.

mod adamw;
mod config;
mod curve_loss;
mod fit;
mod jsd;
mod repulsive;
mod schedule;

pub use adamw::{adamw_step, AdamW, Moments, BETA1, BETA2, EPSILON};
pub use config::{JsdClip, TrainConfig};
pub use curve_loss::{curve_loss_and_gradient, CurveGradient, CurveLoss, NoiseSource};
pub use fit::{init_curve, pretrain_anchor, train_curve, uniform_mixture_ll, StepLog, TrainReport};
pub use jsd::{js_divergence, jsd_penalty, jsd_step, mean_js_divergence, partner_t, JsdStep};
pub use repulsive::{repulsive_gradient, repulsive_penalty};
pub use schedule::{one_cycle_lr, OneCycle};
