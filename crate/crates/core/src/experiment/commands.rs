use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{build_curve, evaluate_curve, inference_grid, train_anchor};
use super::sweep::{run_sweep, SweepOutcome};
use super::ExperimentConfig;
use crate::bma::{bma_predict_on_grid, MetricsReport};
use crate::checkpoint::Checkpoint;
use crate::curve::{ControlPointSet, CurveConfig, CurveMode};
use crate::error::{Error, Result};
use crate::landscape::{barrier, probability_evolution, profile};
use crate::method::Method;
use crate::network::LoraNetwork;
use crate::train::StepLog;

/// Anchor checkpoints written by `train-anchors`; paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorManifest {
    pub seeds: Vec<u64>,
    pub anchors: Vec<PathBuf>,
}

impl AnchorManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn resolved(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        self.anchors.iter().map(|p| dir.join(p)).collect()
    }
}

/// `ALC(2,1)` becomes `ALC_2_1`.
pub fn method_slug(method: Method) -> String {
    let s: String = method
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    s.trim_end_matches('_').replace("__", "_")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Columns `step, lr, train_loss, jsd, val_ll`; absent values are empty.
pub fn write_train_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = crate::csv_writer(path)?;
    w.write_record(["step", "lr", "train_loss", "jsd", "val_ll"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in log {
        w.write_record([s.step.to_string(), s.lr.to_string(), s.train_loss.to_string(), opt(s.jsd), opt(s.val_ll)])?;
    }
    w.flush()?;
    Ok(())
}

fn check_same_network(net: &LoraNetwork, ck: &Checkpoint, what: &Path) -> Result<()> {
    if ck.spec != *net.spec() || ck.base != *net.base() {
        return Err(Error::config(format!(
            "{} was written for a different network than the configured one",
            what.display()
        )));
    }
    Ok(())
}

/// One anchor checkpoint per seed plus `manifest.json`.
pub fn cmd_train_anchors(config: &ExperimentConfig) -> Result<PathBuf> {
    if config.seeds.is_empty() {
        return Err(Error::config("the seed list is empty"));
    }
    let net = config.network()?;
    let data = config.dataset()?;
    let manifest_path = config.anchor_manifest();
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&dir)?;
    let names: Vec<PathBuf> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (theta, report) = train_anchor(&net, &data, &config.train, seed)?;
            let name = PathBuf::from(format!("anchor_seed{seed}.lcrv"));
            let points = ControlPointSet::new(CurveConfig::new(1, 0)?, vec![theta], CurveMode::Free)?;
            Checkpoint::new(&net, points, Some(Method::Map)).save(&dir.join(&name))?;
            write_train_log(&dir.join(format!("anchor_seed{seed}_log.csv")), &report.log)?;
            Ok(name)
        })
        .collect::<Result<_>>()?;
    write_json(
        &manifest_path,
        &AnchorManifest {
            seeds: config.seeds.clone(),
            anchors: names,
        },
    )?;
    info!("wrote {} anchors to {}", config.seeds.len(), dir.display());
    Ok(manifest_path)
}

fn load_anchors(config: &ExperimentConfig, net: &LoraNetwork, needed: usize) -> Result<Vec<Array1<f64>>> {
    let path = config.anchor_manifest();
    let manifest = AnchorManifest::load(&path)?;
    let files = manifest.resolved(&path);
    if files.len() < needed {
        return Err(Error::config(format!(
            "{} needs {needed} anchors but {} lists {}",
            config.method,
            path.display(),
            files.len()
        )));
    }
    files
        .iter()
        .take(needed)
        .map(|f| {
            let ck = Checkpoint::load(f)?;
            check_same_network(net, &ck, f)?;
            if ck.points.len() != 1 {
                return Err(Error::config(format!("{} is not a single-adapter checkpoint", f.display())));
            }
            Ok(ck.points.points()[0].clone())
        })
        .collect()
}

/// Curve checkpoint and, when training ran, its step log.
pub fn cmd_train_curve(config: &ExperimentConfig) -> Result<PathBuf> {
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Error::config("the seed list is empty"))?;
    let method = config.method;
    let net = config.network()?;
    let data = config.dataset()?;
    let anchors = load_anchors(config, &net, method.anchors_needed())?;
    let (points, report) = build_curve(&net, &data, &config.train, method, seed, &anchors)?;
    let stem = format!("{}_seed{seed}", method_slug(method));
    let dir = config.output.join("curves");
    let path = dir.join(format!("{stem}.lcrv"));
    Checkpoint::new(&net, points, Some(method)).save(&path)?;
    if let Some(report) = report {
        write_train_log(&dir.join(format!("{stem}_log.csv")), &report.log)?;
    }
    Ok(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned())
}

fn load_for(config: &ExperimentConfig, checkpoint: &Path) -> Result<(Checkpoint, LoraNetwork)> {
    let ck = Checkpoint::load(checkpoint)?;
    let net = config.network()?;
    check_same_network(&net, &ck, checkpoint)?;
    Ok((ck, net))
}

/// Test-split metrics of a checkpoint, written to `<out>/eval/<stem>_metrics.json`.
pub fn cmd_evaluate(config: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let (ck, net) = load_for(config, checkpoint)?;
    let data = config.dataset()?;
    let method = ck.method;
    let report = evaluate_curve(&net, &data, &ck.points, method, &config.inference)?;
    let dir = config.output.join("eval");
    write_json(&dir.join(format!("{}_metrics.json", stem(checkpoint))), &report)?;
    if config.inference.dump_predictions {
        let grid = inference_grid(method, &ck.points, config.inference.grid_m)?;
        let gp = bma_predict_on_grid(
            &net,
            &ck.points,
            &data.test.features,
            grid,
            config.inference.temperature,
            Some(&data.train),
        )?;
        let evo = crate::landscape::ProbabilityEvolution {
            grid: gp.grid,
            probs: gp.probs,
        };
        evo.write_csv(&dir.join(format!("{}_predictions.csv", stem(checkpoint))))?;
    }
    Ok(report)
}

/// Training-loss profile, barrier report and probability evolution under
/// `<out>/profile/`.
pub fn cmd_profile(config: &ExperimentConfig, checkpoint: &Path) -> Result<PathBuf> {
    let (ck, net) = load_for(config, checkpoint)?;
    let data = config.dataset()?;
    let prof = profile(&net, &ck.points, &data.train, config.profile.points_per_segment)?;
    let anchor_ts: Vec<f64> = (0..ck.points.config().num_anchors).map(|k| k as f64).collect();
    let report = barrier(&prof, &anchor_ts)?;
    let dir = config.output.join("profile");
    let name = stem(checkpoint);
    prof.write_csv(&dir.join(format!("{name}_profile.csv")))?;
    write_json(&dir.join(format!("{name}_barrier.json")), &report)?;
    let n = config.profile.evolution_examples.min(data.test.len());
    let rows: Vec<usize> = (0..n).collect();
    let evo = probability_evolution(&net, &ck.points, &data.test.features.select(&rows), prof.t.clone())?;
    evo.write_csv(&dir.join(format!("{name}_evolution.csv")))?;
    Ok(dir)
}

/// Multi-seed comparison; CSVs go to `<out>/sweep/`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    let outcome = run_sweep(config)?;
    outcome.write_csv(&config.output.join("sweep"))?;
    Ok(outcome)
}
