use log::info;
use ndarray::Array1;

use crate::bma::{evaluate_on_grid, MetricsReport};
use crate::curve::{make_eval_grid, ControlPointSet, CurveMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::InferenceConfig;
use crate::method::Method;
use crate::network::LoraNetwork;
use crate::rng::child_seed;
use crate::train::{init_curve, pretrain_anchor, train_curve, TrainConfig, TrainReport};

/// Seed of the `k`-th anchor trained for run seed `seed`.
pub fn anchor_seed(seed: u64, k: usize) -> u64 {
    child_seed(seed, k as u64)
}

pub fn train_anchor(
    net: &LoraNetwork,
    data: &Dataset,
    train: &TrainConfig,
    seed: u64,
) -> Result<(Array1<f64>, TrainReport)> {
    let (theta, report) = pretrain_anchor(net, data, &train.clone().with_seed(seed))?;
    info!(
        "anchor seed {seed}: {} steps, best val ll {:?}, {:.1?}",
        report.steps_run, report.best_val_ll, report.wall_clock
    );
    Ok((theta, report))
}

/// Anchors for run seed `seed`: anchor `k` is trained with `anchor_seed(seed, k)`.
pub fn train_anchors(
    net: &LoraNetwork,
    data: &Dataset,
    train: &TrainConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<Array1<f64>>> {
    (0..count)
        .map(|k| Ok(train_anchor(net, data, train, anchor_seed(seed, k))?.0))
        .collect()
}

/// Control points for `method`. Methods built on anchors take the first
/// `N` of `anchors`; when nothing is left to train, the curve is assembled
/// from the anchors directly and no report is returned.
pub fn build_curve(
    net: &LoraNetwork,
    data: &Dataset,
    train: &TrainConfig,
    method: Method,
    seed: u64,
    anchors: &[Array1<f64>],
) -> Result<(ControlPointSet, Option<TrainReport>)> {
    let config = method.curve_config()?;
    let train = train.clone().with_seed(seed);
    if method == Method::Map {
        let (theta, report) = pretrain_anchor(net, data, &train)?;
        return Ok((ControlPointSet::new(config, vec![theta], CurveMode::Free)?, Some(report)));
    }
    let needed = method.anchors_needed();
    let points = if needed > 0 {
        if anchors.len() < needed {
            return Err(Error::config(format!(
                "{method} needs {needed} anchors, {} available",
                anchors.len()
            )));
        }
        init_curve(net, config, Some(&anchors[..needed]), seed, train.a_init_scale)?
    } else {
        init_curve(net, config, None, seed, train.a_init_scale)?
    };
    if !points.is_trainable() {
        return Ok((points, None));
    }
    let report = train_curve(net, points, data, &train)?;
    info!(
        "{method} seed {seed}: {} steps, best val ll {:?}, {:.1?}",
        report.steps_run, report.best_val_ll, report.wall_clock
    );
    Ok((report.points.clone(), Some(report)))
}

/// Inference grid: the anchors alone for an ensemble, otherwise the
/// equispaced grid of `grid_m` (default `2 N_cp - 1`) points.
pub fn inference_grid(method: Option<Method>, points: &ControlPointSet, grid_m: Option<usize>) -> Result<Vec<f64>> {
    match method {
        Some(Method::DeepEnsemble(n)) => Ok((0..n).map(|k| k as f64).collect()),
        _ => make_eval_grid(points.config(), grid_m),
    }
}

pub fn evaluate_curve(
    net: &LoraNetwork,
    data: &Dataset,
    points: &ControlPointSet,
    method: Option<Method>,
    inference: &InferenceConfig,
) -> Result<MetricsReport> {
    let grid = inference_grid(method, points, inference.grid_m)?;
    evaluate_on_grid(net, points, &data.test, Some(&data.train), grid, inference.temperature)
}
