use std::time::{Duration, Instant};

use log::{debug, info};
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::config::TrainConfig;
use super::curve_loss::{curve_loss_and_gradient, CurveGradient, NoiseSource};
use super::jsd::jsd_step;
use super::repulsive::{repulsive_gradient, repulsive_penalty};
use crate::bma::{grid_probabilities, mean_log_likelihood, GridPredictions};
use crate::curve::{make_eval_grid, ControlPointSet, CurveConfig, CurveMode};
use crate::data::{Dataset, Split};
use crate::error::{check_dim, Error, Result};
use crate::network::{LoraNetwork, NoiseDraw};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Batch-mean divergence between the two sampled points, when the
    /// diversity term is on.
    pub jsd: Option<f64>,
    pub val_ll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    /// Step whose control points were kept (the best validation score).
    pub best_step: usize,
    pub best_val_ll: Option<f64>,
    pub steps_run: usize,
    pub wall_clock: Duration,
    pub points: ControlPointSet,
}

/// Fresh control points for a curve. Point `i` is drawn from its own stream,
/// so the same seed gives the same initial points regardless of the curve
/// shape. With `anchors` the anchor positions are copied in and frozen.
pub fn init_curve(
    net: &LoraNetwork,
    config: CurveConfig,
    anchors: Option<&[Array1<f64>]>,
    seed: u64,
    a_init_scale: f64,
) -> Result<ControlPointSet> {
    config.validate()?;
    let layout = net.layout();
    let mut points: Vec<Array1<f64>> = (0..config.num_control_points())
        .map(|i| layout.init_adapter(&mut stream_rng(seed, Stream::Init, i as u64), a_init_scale))
        .collect();
    let mode = match anchors {
        None => CurveMode::Free,
        Some(anchors) => {
            check_dim("anchor count", config.num_anchors, anchors.len())?;
            for (a, idx) in anchors.iter().zip(config.anchor_indices()) {
                check_dim("anchor dimension", layout.dim(), a.len())?;
                points[idx] = a.clone();
            }
            CurveMode::Anchored
        }
    };
    ControlPointSet::new(config, points, mode)
}

/// Mean log-likelihood of the uniform grid mixture on `data`.
pub fn uniform_mixture_ll(net: &LoraNetwork, points: &ControlPointSet, data: &Split) -> Result<f64> {
    let grid = make_eval_grid(points.config(), None)?;
    let probs = grid_probabilities(net, points, &data.features, &grid)?;
    let m = grid.len();
    let gp = GridPredictions::new(grid, probs, vec![1.0 / m as f64; m])?;
    Ok(mean_log_likelihood(&gp.mixture(), &data.labels))
}

struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            size: size.min(n),
            rng: stream_rng(seed, Stream::Batches, 0),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        out
    }
}

/// Train the unfrozen control points on `data.train`. When `data.val` is
/// non-empty the uniform-mixture validation log-likelihood is checked every
/// `eval_every` steps and the best points are returned.
pub fn train_curve(
    net: &LoraNetwork,
    mut points: ControlPointSet,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if !points.is_trainable() {
        return Err(Error::config("every control point is frozen; nothing to train"));
    }
    if data.train.is_empty() {
        return Err(Error::domain("empty training split"));
    }
    check_dim("adapter dimension", net.adapter_dim(), points.dim())?;
    let start = Instant::now();
    let total = config.curve_steps;
    let n_seg = points.config().num_segments();
    let use_jsd = config.lambda_jsd > 0.0 && n_seg > 0;
    let pert = config.perturbation;
    let warmup_steps = (config.schedule.pct_start * total as f64).max(1.0);

    let mut batches = Batcher::new(data.train.len(), config.batch_size, config.seed);
    let mut t_rng = stream_rng(config.seed, Stream::CurveParam, 0);
    let mut noise_rng = stream_rng(config.seed, Stream::Noise, 0);
    let dims: Vec<Option<usize>> = points.frozen().iter().map(|&f| (!f).then_some(points.dim())).collect();
    let mut opt = AdamW::new(&dims);
    let mut draw: Option<NoiseDraw> = None;

    let mut log = Vec::with_capacity(total);
    let mut best: Option<(f64, usize, ControlPointSet)> = None;
    let mut stale = 0usize;
    let mut steps_run = 0;

    for step in 0..total {
        let lr = config.schedule.lr(step, total)?;
        let batch = data.train.select(batches.next());
        let rho = if pert.warmup {
            pert.rho * (step as f64 / warmup_steps).min(1.0)
        } else {
            pert.rho
        };
        if pert.rho > 0.0 && step % pert.resample_every == 0 {
            draw = Some(NoiseDraw::sample(net, &mut noise_rng));
        }
        let noise = draw.as_ref().map(|d| NoiseSource { draw: d, rho });
        let t1 = if n_seg == 0 {
            0.0
        } else {
            t_rng.random::<f64>() * n_seg as f64
        };

        let (mut loss, mut gradient, jsd): (f64, CurveGradient, Option<f64>) = if use_jsd {
            let s = jsd_step(net, &points, &batch.features, &batch.labels, t1, config, noise)?;
            (s.loss, s.gradient, Some(s.divergence))
        } else {
            let s = curve_loss_and_gradient(net, &points, &batch.features, &batch.labels, t1, noise)?;
            (s.loss, s.gradient, None)
        };
        if config.repulsive_weight > 0.0 && points.len() > 1 {
            loss += config.repulsive_weight * repulsive_penalty(points.points())?;
            for (g, r) in gradient.per_point.iter_mut().zip(repulsive_gradient(points.points())?) {
                if let Some(g) = g {
                    g.scaled_add(config.repulsive_weight, &r);
                }
            }
        }
        if !loss.is_finite() || !gradient.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(&mut points.trainable_mut(), &gradient.per_point, lr, config.weight_decay)?;
        steps_run = step + 1;

        let mut val_ll = None;
        if !data.val.is_empty() && (steps_run % config.eval_every == 0 || steps_run == total) {
            let ll = uniform_mixture_ll(net, &points, &data.val)?;
            if !ll.is_finite() {
                return Err(Error::Diverged { step, loss: ll });
            }
            val_ll = Some(ll);
            debug!("step {steps_run}: loss {loss:.4}, val ll {ll:.4}");
            if best.as_ref().is_none_or(|(b, _, _)| ll > *b) {
                best = Some((ll, steps_run, points.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        log.push(StepLog {
            step,
            lr,
            train_loss: loss,
            jsd,
            val_ll,
        });
        if config.patience.is_some_and(|p| stale >= p) {
            info!("early stop at step {steps_run}");
            break;
        }
    }

    let (best_val_ll, best_step, points) = match best {
        Some((ll, s, p)) => (Some(ll), s, p),
        None => (None, steps_run, points),
    };
    Ok(TrainReport {
        log,
        best_step,
        best_val_ll,
        steps_run,
        wall_clock: start.elapsed(),
        points,
    })
}

/// Train one adapter vector: a single-point curve run for `anchor_steps`.
pub fn pretrain_anchor(net: &LoraNetwork, data: &Dataset, config: &TrainConfig) -> Result<(Array1<f64>, TrainReport)> {
    let points = init_curve(net, CurveConfig::new(1, 0)?, None, config.seed, config.a_init_scale)?;
    let anchor_config = TrainConfig {
        curve_steps: config.anchor_steps,
        lambda_jsd: 0.0,
        ..config.clone()
    };
    let report = train_curve(net, points, data, &anchor_config)?;
    Ok((report.points.points()[0].clone(), report))
}
