//! Loss and accuracy along a curve, barriers between anchors, and numerical
//! checks of path regularity.

use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bma::{accuracy, grid_probabilities};
use crate::curve::{ControlPointSet, Side};
use crate::data::{Features, Split};
use crate::error::{Error, Result};
use crate::network::{cross_entropy, LoraNetwork};

pub const DEFAULT_POINTS_PER_SEGMENT: usize = 101;

/// Per-grid-point quantities along a curve. Speeds are one-sided: at a
/// segment join the left and right values generally differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub t: Vec<f64>,
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// `loss - loss[0]`
    pub delta: Vec<f64>,
    /// Frobenius norm of `d loss / d W` over all adapted matrices.
    pub grad_norm: Vec<f64>,
    pub speed_left: Vec<f64>,
    pub speed_right: Vec<f64>,
    pub points_per_segment: usize,
    pub num_segments: usize,
}

impl LossProfile {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Speed column for tabular output: right-sided except at the far end.
    pub fn speed(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| if i + 1 == n && n > 1 { self.speed_left[i] } else { self.speed_right[i] })
            .collect()
    }

    /// Grid indices `[start, end]` covering segment `k` (joins are shared).
    pub fn segment_range(&self, k: usize) -> (usize, usize) {
        let step = self.points_per_segment - 1;
        (k * step, (k + 1) * step)
    }

    /// Columns `t, loss, acc, grad_norm, speed`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::csv_writer(path)?;
        w.write_record(["t", "loss", "acc", "grad_norm", "speed"])?;
        for (i, speed) in self.speed().into_iter().enumerate() {
            w.write_record([
                self.t[i].to_string(),
                self.loss[i].to_string(),
                self.accuracy[i].to_string(),
                self.grad_norm[i].to_string(),
                speed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `points_per_segment` points on each segment, joins shared.
pub fn profile_grid(num_segments: usize, points_per_segment: usize) -> Result<Vec<f64>> {
    if points_per_segment < 2 {
        return Err(Error::domain("need at least two points per segment"));
    }
    if num_segments == 0 {
        return Ok(vec![0.0]);
    }
    let step = points_per_segment - 1;
    Ok((0..=num_segments * step)
        .map(|i| {
            let (k, j) = (i / step, i % step);
            k as f64 + j as f64 / step as f64
        })
        .collect())
}

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `|| dW/dt ||` from the product rule `s (dB A + B dA)` over all sites.
fn weight_speed(net: &LoraNetwork, theta: &Array1<f64>, dtheta: &Array1<f64>) -> Result<f64> {
    let s = net.spec().scaling();
    let f = net.layout().unflatten(theta)?;
    let df = net.layout().unflatten(dtheta)?;
    Ok(f.iter()
        .zip(&df)
        .map(|(f, d)| frobenius_sq(&((d.b.dot(&f.a) + f.b.dot(&d.a)) * s)))
        .sum::<f64>()
        .sqrt())
}

struct PointStats {
    loss: f64,
    acc: f64,
    grad_norm: f64,
    speed_left: f64,
    speed_right: f64,
}

fn point_stats(net: &LoraNetwork, points: &ControlPointSet, data: &Split, t: f64) -> Result<PointStats> {
    let theta = points.eval(t)?;
    let weights = net.materialize(&theta)?;
    let pass = net.forward(&weights, &data.features)?;
    let (loss, d_logits) = cross_entropy(&pass, &data.labels, net.spec().num_classes)?;
    let grads = net.backward(&weights, &pass, &d_logits)?;
    let grad_norm = grads.iter().map(frobenius_sq).sum::<f64>().sqrt();
    let speed_left = weight_speed(net, &theta, &points.derivative(t, Side::Left)?)?;
    let speed_right = weight_speed(net, &theta, &points.derivative(t, Side::Right)?)?;
    Ok(PointStats {
        loss,
        acc: accuracy(&pass.probs, &data.labels),
        grad_norm,
        speed_left,
        speed_right,
    })
}

/// Profile of the mean cross-entropy of `data` along the curve.
pub fn profile(
    net: &LoraNetwork,
    points: &ControlPointSet,
    data: &Split,
    points_per_segment: usize,
) -> Result<LossProfile> {
    let num_segments = points.config().num_segments();
    let t = profile_grid(num_segments, points_per_segment)?;
    let stats: Vec<PointStats> = t
        .par_iter()
        .map(|&t| point_stats(net, points, data, t))
        .collect::<Result<_>>()?;
    let loss: Vec<f64> = stats.iter().map(|s| s.loss).collect();
    let out = LossProfile {
        delta: loss.iter().map(|l| l - loss[0]).collect(),
        accuracy: stats.iter().map(|s| s.acc).collect(),
        grad_norm: stats.iter().map(|s| s.grad_norm).collect(),
        speed_left: stats.iter().map(|s| s.speed_left).collect(),
        speed_right: stats.iter().map(|s| s.speed_right).collect(),
        loss,
        t,
        points_per_segment,
        num_segments,
    };
    let finite = [&out.loss, &out.grad_norm, &out.speed_left, &out.speed_right]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(Error::NonFinite { layer: "loss profile".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBarrier {
    pub start: f64,
    pub end: f64,
    pub barrier: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub max_path_loss: f64,
    pub max_anchor_loss: f64,
    /// `max(max_path_loss - max_anchor_loss, 0)`
    pub barrier: f64,
    pub t_max: f64,
    /// One entry per pair of consecutive anchors.
    pub segments: Vec<SegmentBarrier>,
}

fn grid_index(t: &[f64], value: f64) -> Result<usize> {
    t.iter()
        .position(|&g| (g - value).abs() < 1e-9)
        .ok_or_else(|| Error::domain(format!("anchor t = {value} is not on the profile grid")))
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

/// Height of the loss along the path above the worse of the anchors.
pub fn barrier(profile: &LossProfile, anchor_ts: &[f64]) -> Result<BarrierReport> {
    if profile.is_empty() {
        return Err(Error::domain("empty profile"));
    }
    if anchor_ts.is_empty() {
        return Err(Error::domain("no anchors given"));
    }
    let mut idx: Vec<usize> = anchor_ts
        .iter()
        .map(|&a| grid_index(&profile.t, a))
        .collect::<Result<_>>()?;
    idx.sort_unstable();
    let top = argmax(&profile.loss);
    let max_anchor_loss = idx.iter().map(|&i| profile.loss[i]).fold(f64::NEG_INFINITY, f64::max);
    let segments = idx
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let local = a + argmax(&profile.loss[a..=b]);
            SegmentBarrier {
                start: profile.t[a],
                end: profile.t[b],
                barrier: (profile.loss[local] - profile.loss[a].max(profile.loss[b])).max(0.0),
                t_max: profile.t[local],
            }
        })
        .collect();
    Ok(BarrierReport {
        max_path_loss: profile.loss[top],
        max_anchor_loss,
        barrier: (profile.loss[top] - max_anchor_loss).max(0.0),
        t_max: profile.t[top],
        segments,
    })
}

/// Running trapezoid integral; `out[0] = 0`.
pub fn cumulative_trapezoid(x: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        if i > 0 {
            acc += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs_checked: usize,
    pub violations: usize,
    /// Smallest `bound + allowance - |loss(t) - loss(s)|` over all pairs.
    pub worst_slack: f64,
    pub worst_pair: (f64, f64),
    /// Quadrature allowance used on each segment.
    pub allowances: Vec<f64>,
}

/// Checks `|l(t) - l(s)| <= int_s^t ||grad_W L(u)|| ||dW/du|| du` for every
/// grid pair inside one segment. The integral is a trapezoid sum; the
/// allowance per segment is `h^2 max |f''|` with `f''` estimated by second
/// differences of the integrand.
pub fn lipschitz_check(profile: &LossProfile) -> Result<LipschitzReport> {
    if profile.is_empty() {
        return Err(Error::domain("empty profile"));
    }
    let mut report = LipschitzReport {
        pairs_checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
        worst_pair: (profile.t[0], profile.t[0]),
        allowances: Vec::new(),
    };
    let scale = profile.loss.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    for k in 0..profile.num_segments {
        let (a, b) = profile.segment_range(k);
        let x = &profile.t[a..=b];
        // inside a segment the one-sided speeds at its ends come from this segment
        let f: Vec<f64> = (a..=b)
            .map(|i| {
                let speed = if i == a {
                    profile.speed_right[i]
                } else if i == b {
                    profile.speed_left[i]
                } else {
                    profile.speed_right[i]
                };
                profile.grad_norm[i] * speed
            })
            .collect();
        let integral = cumulative_trapezoid(x, &f);
        let allowance = f
            .windows(3)
            .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
            .fold(0.0, f64::max)
            + 1e-12 * scale;
        report.allowances.push(allowance);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let lhs = (profile.loss[a + j] - profile.loss[a + i]).abs();
                let slack = integral[j] - integral[i] + allowance - lhs;
                report.pairs_checked += 1;
                if slack < 0.0 {
                    report.violations += 1;
                }
                if slack < report.worst_slack {
                    report.worst_slack = slack;
                    report.worst_pair = (x[i], x[j]);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub epsilon: f64,
    /// Largest total-variation distance over the probed inputs.
    pub tv_left: f64,
    pub tv_right: f64,
}

pub fn total_variation(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    p.rows()
        .into_iter()
        .zip(q.rows())
        .map(|(a, b)| 0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Distance between predictions at `t` and at `t - eps`, `t + eps` for each
/// `eps`. A side that would leave `[0, N_seg]` reports 0.
pub fn continuity_probe(
    net: &LoraNetwork,
    points: &ControlPointSet,
    inputs: &Features,
    t: f64,
    epsilons: &[f64],
) -> Result<Vec<ContinuityRow>> {
    let t_max = points.config().t_max();
    let centre = net.predict(&points.eval(t)?, inputs)?;
    let side = |s: f64| -> Result<f64> {
        if !(0.0..=t_max).contains(&s) {
            return Ok(0.0);
        }
        Ok(total_variation(&centre, &net.predict(&points.eval(s)?, inputs)?))
    };
    epsilons
        .iter()
        .map(|&eps| {
            if !(eps >= 0.0) {
                return Err(Error::domain(format!("epsilon must be non-negative, got {eps}")));
            }
            Ok(ContinuityRow {
                epsilon: eps,
                tv_left: side(t - eps)?,
                tv_right: side(t + eps)?,
            })
        })
        .collect()
}

/// Class probabilities of each input at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityEvolution {
    pub grid: Vec<f64>,
    /// `probs[j]` is `examples x C` at `grid[j]`.
    pub probs: Vec<Array2<f64>>,
}

impl ProbabilityEvolution {
    /// Long format: `example_id, t, class, probability`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::csv_writer(path)?;
        w.write_record(["example_id", "t", "class", "probability"])?;
        let n = self.probs.first().map_or(0, |p| p.nrows());
        for i in 0..n {
            for (t, p) in self.grid.iter().zip(&self.probs) {
                for (c, v) in p.row(i).iter().enumerate() {
                    w.write_record([i.to_string(), t.to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn probability_evolution(
    net: &LoraNetwork,
    points: &ControlPointSet,
    inputs: &Features,
    grid: Vec<f64>,
) -> Result<ProbabilityEvolution> {
    let probs = grid_probabilities(net, points, inputs, &grid)?;
    Ok(ProbabilityEvolution { grid, probs })
}
