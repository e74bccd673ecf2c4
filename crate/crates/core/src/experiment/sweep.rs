use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use super::run::{build_curve, evaluate_curve, train_anchors};
use super::ExperimentConfig;
use crate::bma::MetricsReport;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::method::Method;
use crate::network::LoraNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub method: Method,
    pub seed: u64,
    /// Metrics, or the error message of a failed run.
    pub result: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub succeeded: usize,
    pub failed_seeds: Vec<u64>,
    pub accuracy: MeanStd,
    pub log_likelihood: MeanStd,
    pub ece: MeanStd,
    pub mutual_information: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn has_failures(&self) -> bool {
        self.runs.iter().any(|r| r.result.is_err())
    }

    /// `summary.csv` with one row per method and `runs.csv` with one row per
    /// (method, seed).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let mut w = crate::csv_writer(&dir.join("summary.csv"))?;
        w.write_record([
            "method", "succeeded", "failed", "acc_mean", "acc_std", "ll_mean", "ll_std", "ece_mean", "ece_std",
            "mi_mean", "mi_std", "failed_seeds",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.method.to_string(), r.succeeded.to_string(), r.failed_seeds.len().to_string()];
            for m in [r.accuracy, r.log_likelihood, r.ece, r.mutual_information] {
                rec.push(m.mean.to_string());
                rec.push(m.std.to_string());
            }
            rec.push(r.failed_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = crate::csv_writer(&dir.join("runs.csv"))?;
        w.write_record(["method", "seed", "status", "acc", "ll", "ece", "mi", "error"])?;
        for r in &self.runs {
            let rec: Vec<String> = match &r.result {
                Ok(m) => vec![
                    r.method.to_string(),
                    r.seed.to_string(),
                    "ok".into(),
                    m.accuracy.to_string(),
                    m.log_likelihood.to_string(),
                    m.ece.to_string(),
                    m.mutual_information.to_string(),
                    String::new(),
                ],
                Err(e) => vec![
                    r.method.to_string(),
                    r.seed.to_string(),
                    "failed".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            };
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-method mean and standard deviation over the successful seeds.
pub fn aggregate(methods: &[Method], runs: &[SweepRun]) -> Vec<SweepRow> {
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&MetricsReport> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            SweepRow {
                method,
                succeeded: ok.len(),
                failed_seeds: mine.iter().filter(|r| r.result.is_err()).map(|r| r.seed).collect(),
                accuracy: col(|m| m.accuracy),
                log_likelihood: col(|m| m.log_likelihood),
                ece: col(|m| m.ece),
                mutual_information: col(|m| m.mutual_information),
            }
        })
        .collect()
}

/// Every method for one run seed, sharing that seed's anchors.
pub fn run_seed(
    config: &ExperimentConfig,
    net: &LoraNetwork,
    data: &Dataset,
    methods: &[Method],
    seed: u64,
) -> Vec<SweepRun> {
    let needed = methods.iter().map(Method::anchors_needed).max().unwrap_or(0);
    let anchors: std::result::Result<Vec<Array1<f64>>, String> =
        train_anchors(net, data, &config.train, seed, needed).map_err(|e| e.to_string());
    methods
        .iter()
        .map(|&method| {
            let result = anchors.clone().and_then(|anchors| {
                build_curve(net, data, &config.train, method, seed, &anchors)
                    .and_then(|(points, _)| evaluate_curve(net, data, &points, Some(method), &config.inference))
                    .map_err(|e| e.to_string())
            });
            SweepRun { method, seed, result }
        })
        .collect()
}

/// Runs every (method, seed) pair; seeds are spread over a worker pool.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    if config.seeds.len() < 2 {
        return Err(Error::config("a sweep needs at least two seeds"));
    }
    let net = config.network()?;
    let data = config.dataset()?;
    let methods = config.methods();
    run_sweep_with(config, &methods, |seed| run_seed(config, &net, &data, &methods, seed))
}

/// Sweep driver with a caller-supplied per-seed runner.
pub fn run_sweep_with<F>(config: &ExperimentConfig, methods: &[Method], per_seed: F) -> Result<SweepOutcome>
where
    F: Fn(u64) -> Vec<SweepRun> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let per_seed: Vec<Vec<SweepRun>> = pool.install(|| config.seeds.par_iter().map(|&s| per_seed(s)).collect());
    let runs: Vec<SweepRun> = per_seed.into_iter().flatten().collect();
    Ok(SweepOutcome {
        rows: aggregate(methods, &runs),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bma::Temperature;

    fn report(acc: f64) -> MetricsReport {
        MetricsReport {
            accuracy: acc,
            log_likelihood: -0.5,
            ece: 0.1,
            mutual_information: 0.0,
            per_example_mi: None,
            num_examples: 10,
            temperature: Temperature::Infinite,
            grid: vec![0.0],
            weights: vec![1.0],
        }
    }

    #[test]
    fn identical_values_have_zero_std() {
        let m = MeanStd::of(&[0.8125, 0.8125]);
        assert_eq!(m, MeanStd { mean: 0.8125, std: 0.0 });
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn failures_are_listed() {
        let config = ExperimentConfig {
            seeds: vec![1, 2, 3],
            workers: Some(2),
            ..ExperimentConfig::default()
        };
        let methods = [Method::Map];
        let out = run_sweep_with(&config, &methods, |seed| {
            vec![SweepRun {
                method: Method::Map,
                seed,
                result: if seed == 2 { Err("boom".into()) } else { Ok(report(0.5 + seed as f64 / 10.0)) },
            }]
        })
        .unwrap();
        assert!(out.has_failures());
        assert_eq!(out.rows[0].failed_seeds, vec![2]);
        assert_eq!(out.rows[0].succeeded, 2);
        assert!((out.rows[0].accuracy.mean - 0.7).abs() < 1e-15);
        let dir = tempfile::tempdir().unwrap();
        out.write_csv(dir.path()).unwrap();
        let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert!(runs.contains("MAP,2,failed,,,,,boom"));
    }
}
