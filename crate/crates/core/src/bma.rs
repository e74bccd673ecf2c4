//! Grid model averaging along a curve and the evaluation metrics built on it.
//!
//! Predictions at equispaced curve points `t_j` are mixed with weights
//! `w_j(T) ∝ p(D | t_j)^(1/T)`. `T = ∞` gives uniform weights, which is the
//! default everywhere. All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::curve::{make_eval_grid, ControlPointSet};
use crate::data::{Dataset, Features, Split};
use crate::error::{check_dim, Error, Result};
use crate::network::LoraNetwork;

/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_ECE_BINS: usize = 15;
/// Grid size for standalone mutual-information estimates.
pub const DEFAULT_MI_GRID: usize = 20;

const DISTRIBUTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Temperature {
    /// Uniform averaging.
    #[default]
    Infinite,
    Finite(f64),
}

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value == f64::INFINITY {
            Ok(Temperature::Infinite)
        } else if value > 0.0 && value.is_finite() {
            Ok(Temperature::Finite(value))
        } else {
            Err(Error::domain(format!("temperature must be positive, got {value}")))
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Temperature::Infinite => f64::INFINITY,
            Temperature::Finite(t) => t,
        }
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Infinite => f.write_str("inf"),
            Temperature::Finite(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Temperature::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::config(format!("cannot parse temperature {s:?}")))?;
                Temperature::new(v)
            }
        }
    }
}

impl Serialize for Temperature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Temperature::Infinite => s.serialize_str("inf"),
            Temperature::Finite(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for Temperature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Temperature::new(v).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Normalized `exp(loglik_j / T)`, computed with max subtraction.
pub fn temperature_weights(log_likelihoods: &[f64], temperature: Temperature) -> Result<Vec<f64>> {
    let m = log_likelihoods.len();
    if m == 0 {
        return Err(Error::domain("no grid points to weight"));
    }
    if log_likelihoods.iter().any(|l| !l.is_finite()) {
        return Err(Error::domain("log-likelihoods must be finite"));
    }
    let t = match temperature {
        Temperature::Infinite => return Ok(vec![1.0 / m as f64; m]),
        Temperature::Finite(t) if t > 0.0 => t,
        Temperature::Finite(t) => {
            return Err(Error::domain(format!("temperature must be positive, got {t}")))
        }
    };
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_likelihoods.iter().map(|l| ((l - max) / t).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Per-grid-point predictive distributions and their mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPredictions {
    pub grid: Vec<f64>,
    /// `probs[j]` is `n x C` at `grid[j]`.
    pub probs: Vec<Array2<f64>>,
    pub weights: Vec<f64>,
    /// Summed log-likelihood of the weighting data at each grid point, when
    /// the weights were derived from one.
    pub data_log_likelihood: Option<Vec<f64>>,
}

impl GridPredictions {
    pub fn new(grid: Vec<f64>, probs: Vec<Array2<f64>>, weights: Vec<f64>) -> Result<Self> {
        let gp = Self {
            grid,
            probs,
            weights,
            data_log_likelihood: None,
        };
        gp.validate()?;
        Ok(gp)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.probs.len();
        if m == 0 {
            return Err(Error::domain("grid predictions need at least one point"));
        }
        check_dim("grid weights", m, self.weights.len())?;
        check_dim("grid points", m, self.grid.len())?;
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(Error::domain("grid weights must be non-negative and sum to 1"));
        }
        let shape = self.probs[0].dim();
        for p in &self.probs {
            if p.dim() != shape {
                return Err(Error::domain("grid predictions disagree in shape"));
            }
            for row in p.rows() {
                if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite())
                    || (row.sum() - 1.0).abs() > DISTRIBUTION_TOL
                {
                    return Err(Error::domain("rows must be probability distributions"));
                }
            }
        }
        Ok(())
    }

    pub fn num_examples(&self) -> usize {
        self.probs[0].nrows()
    }

    /// `sum_j w_j p_j`.
    pub fn mixture(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.probs[0].dim());
        for (p, &w) in self.probs.iter().zip(&self.weights) {
            out.scaled_add(w, p);
        }
        out
    }
}

/// Softmax outputs at each grid point, evaluated in parallel.
pub fn grid_probabilities(
    net: &LoraNetwork,
    points: &ControlPointSet,
    features: &Features,
    grid: &[f64],
) -> Result<Vec<Array2<f64>>> {
    grid.par_iter()
        .map(|&t| net.predict(&points.eval(t)?, features))
        .collect()
}

/// Summed log-likelihood of `data` at each grid point (log of `p(D | t_j)`).
pub fn data_log_likelihoods(
    net: &LoraNetwork,
    points: &ControlPointSet,
    data: &Split,
    grid: &[f64],
) -> Result<Vec<f64>> {
    grid.par_iter()
        .map(|&t| {
            let theta = points.eval(t)?;
            let pass = net.forward(&net.materialize(&theta)?, &data.features)?;
            Ok(data
                .labels
                .iter()
                .enumerate()
                .map(|(i, &y)| pass.log_probs[[i, y]])
                .sum())
        })
        .collect()
}

/// Posterior-predictive approximation on an explicit grid. Finite
/// temperatures need `weighting` data to score the grid points.
pub fn bma_predict_on_grid(
    net: &LoraNetwork,
    points: &ControlPointSet,
    features: &Features,
    grid: Vec<f64>,
    temperature: Temperature,
    weighting: Option<&Split>,
) -> Result<GridPredictions> {
    let probs = grid_probabilities(net, points, features, &grid)?;
    let (weights, data_log_likelihood) = match temperature {
        Temperature::Infinite => (temperature_weights(&vec![0.0; grid.len()], temperature)?, None),
        Temperature::Finite(_) => {
            let data = weighting.ok_or_else(|| {
                Error::config("finite temperature needs data to weight the grid points")
            })?;
            let ll = data_log_likelihoods(net, points, data, &grid)?;
            (temperature_weights(&ll, temperature)?, Some(ll))
        }
    };
    let mut gp = GridPredictions::new(grid, probs, weights)?;
    gp.data_log_likelihood = data_log_likelihood;
    Ok(gp)
}

/// Posterior-predictive approximation on the default (or `grid_m`-point) grid.
pub fn bma_predict(
    net: &LoraNetwork,
    points: &ControlPointSet,
    features: &Features,
    grid_m: Option<usize>,
    temperature: Temperature,
    weighting: Option<&Split>,
) -> Result<GridPredictions> {
    let grid = make_eval_grid(points.config(), grid_m)?;
    bma_predict_on_grid(net, points, features, grid, temperature, weighting)
}

pub fn entropy(p: ArrayView1<f64>) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub per_example: Vec<f64>,
    pub mean: f64,
}

/// Disagreement between grid points: `H[sum_j w_j p_j] - sum_j w_j H[p_j]`
/// per example, and its mean over examples.
pub fn mutual_information(gp: &GridPredictions) -> Result<MutualInformation> {
    gp.validate()?;
    let mixture = gp.mixture();
    let per_example: Vec<f64> = (0..gp.num_examples())
        .map(|i| {
            let expected: f64 = gp
                .probs
                .iter()
                .zip(&gp.weights)
                .map(|(p, &w)| w * entropy(p.row(i)))
                .sum();
            (entropy(mixture.row(i)) - expected).max(0.0)
        })
        .collect();
    let mean = per_example.iter().sum::<f64>() / per_example.len().max(1) as f64;
    Ok(MutualInformation { per_example, mean })
}

fn argmax(row: ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(*row) == y)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Mean `ln p(y)`; probabilities are floored at the smallest positive normal
/// `f64` so a fully wrong prediction stays finite.
pub fn mean_log_likelihood(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| probs[[i, y]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len().max(1) as f64
}

/// Equal-width-bin ECE over top-1 confidence: `sum_b (n_b / n) |acc_b - conf_b|`.
pub fn expected_calibration_error(probs: &Array2<f64>, labels: &[usize], num_bins: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::domain("calibration error of an empty dataset"));
    }
    if num_bins == 0 {
        return Err(Error::domain("need at least one bin"));
    }
    check_dim("label count", probs.nrows(), labels.len())?;
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut hits = vec![0usize; num_bins];
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::domain(format!("confidence {conf} outside [0, 1]")));
        }
        let bin = ((conf * num_bins as f64) as usize).min(num_bins - 1);
        count[bin] += 1;
        conf_sum[bin] += conf;
        hits[bin] += usize::from(pred == y);
    }
    let n = labels.len() as f64;
    Ok((0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub log_likelihood: f64,
    pub ece: f64,
    pub mutual_information: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_example_mi: Option<Vec<f64>>,
    pub num_examples: usize,
    pub temperature: Temperature,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Metrics of grid predictions against labels.
pub fn metrics(gp: &GridPredictions, labels: &[usize], temperature: Temperature) -> Result<MetricsReport> {
    check_dim("label count", gp.num_examples(), labels.len())?;
    let mixture = gp.mixture();
    let mi = mutual_information(gp)?;
    Ok(MetricsReport {
        accuracy: accuracy(&mixture, labels),
        log_likelihood: mean_log_likelihood(&mixture, labels),
        ece: expected_calibration_error(&mixture, labels, DEFAULT_ECE_BINS)?,
        mutual_information: mi.mean,
        per_example_mi: None,
        num_examples: labels.len(),
        temperature,
        grid: gp.grid.clone(),
        weights: gp.weights.clone(),
    })
}

/// Evaluate on `eval` with the grid weighted (for finite `T`) by `weighting`.
pub fn evaluate_on_grid(
    net: &LoraNetwork,
    points: &ControlPointSet,
    eval: &Split,
    weighting: Option<&Split>,
    grid: Vec<f64>,
    temperature: Temperature,
) -> Result<MetricsReport> {
    let gp = bma_predict_on_grid(net, points, &eval.features, grid, temperature, weighting)?;
    metrics(&gp, &eval.labels, temperature)
}

/// Test-split metrics; the training split scores grid points for finite `T`.
pub fn evaluate(
    net: &LoraNetwork,
    points: &ControlPointSet,
    dataset: &Dataset,
    grid_m: Option<usize>,
    temperature: Temperature,
) -> Result<MetricsReport> {
    let grid = make_eval_grid(points.config(), grid_m)?;
    evaluate_on_grid(net, points, &dataset.test, Some(&dataset.train), grid, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn softmax_oracle(l: &[f64], t: f64) -> Vec<f64> {
        // independent route: log-sum-exp in the log domain
        let scaled: Vec<f64> = l.iter().map(|x| x / t).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scaled.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        scaled.iter().map(|x| (x - lse).exp()).collect()
    }

    #[test]
    fn temperature_examples() {
        assert_eq!(temperature_weights(&[-5.0, 3.0, 1e3], Temperature::Infinite).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(temperature_weights(&[-2.0; 4], Temperature::Finite(0.7)).unwrap(), vec![0.25; 4]);
        let w = temperature_weights(&[0.0, 3f64.ln()], Temperature::Finite(1.0)).unwrap();
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-15);
        assert!(temperature_weights(&[0.0], Temperature::Finite(0.0)).is_err());
        assert!(temperature_weights(&[f64::NAN], Temperature::Infinite).is_err());
        assert!(Temperature::new(-1.0).is_err());
    }

    #[test]
    fn temperature_parse_and_serde() {
        assert_eq!("inf".parse::<Temperature>().unwrap(), Temperature::Infinite);
        assert_eq!("2.5".parse::<Temperature>().unwrap(), Temperature::Finite(2.5));
        assert!("0".parse::<Temperature>().is_err());
        assert_eq!(serde_json::to_string(&Temperature::Infinite).unwrap(), "\"inf\"");
        let t: Temperature = serde_json::from_str("1.5").unwrap();
        assert_eq!(t, Temperature::Finite(1.5));
    }

    #[test]
    fn shift_invariance_exact() {
        let l = [-3.0, -1.5, -7.25, -2.0];
        let a = temperature_weights(&l, Temperature::Finite(2.0)).unwrap();
        let shifted: Vec<f64> = l.iter().map(|x| x - 1024.0).collect();
        let b = temperature_weights(&shifted, Temperature::Finite(2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mutual_information_examples() {
        let same = GridPredictions::new(
            vec![0.0, 1.0],
            vec![array![[0.3, 0.7]], array![[0.3, 0.7]]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(mutual_information(&same).unwrap().mean, 0.0);
        let split = GridPredictions::new(
            vec![0.0, 1.0],
            vec![array![[1.0, 0.0]], array![[0.0, 1.0]]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_abs_diff_eq!(mutual_information(&split).unwrap().mean, LN_2, epsilon = 1e-15);
        assert_eq!(split.mixture(), array![[0.5, 0.5]]);
        assert!(GridPredictions::new(vec![0.0], vec![array![[0.6, 0.6]]], vec![1.0]).is_err());
        assert!(GridPredictions::new(vec![0.0], vec![array![[0.5, 0.5]]], vec![0.9]).is_err());
    }

    #[test]
    fn ece_examples() {
        let certain = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(expected_calibration_error(&certain, &[0, 1], 15).unwrap(), 0.0);
        assert_eq!(expected_calibration_error(&certain, &[0, 0], 15).unwrap(), 0.5);
        let p = Array2::from_shape_fn((10, 2), |(_, c)| if c == 0 { 0.8 } else { 0.2 });
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        assert_abs_diff_eq!(expected_calibration_error(&p, &labels, 15).unwrap(), 0.0, epsilon = 1e-15);
        assert!(expected_calibration_error(&Array2::zeros((0, 2)), &[], 15).is_err());
    }

    fn random_grid(seed: u64, m: usize, n: usize, c: usize) -> GridPredictions {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let probs = (0..m)
            .map(|_| {
                let z = Array2::from_shape_fn((n, c), |_| rng.random_range(-4.0..4.0));
                crate::network::log_softmax(&z).mapv(f64::exp)
            })
            .collect();
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        GridPredictions::new(
            (0..m).map(|j| j as f64).collect(),
            probs,
            raw.iter().map(|w| w / s).collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn finite_weights_match_log_domain_oracle(
            l in proptest::collection::vec(-500.0f64..0.0, 1..30), t in 0.01f64..100.0
        ) {
            let w = temperature_weights(&l, Temperature::Finite(t)).unwrap();
            for (a, b) in w.iter().zip(softmax_oracle(&l, t)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sharpening_with_lower_temperature(
            l in proptest::collection::vec(-50.0f64..0.0, 2..10), t1 in 0.05f64..5.0, dt in 0.0f64..5.0
        ) {
            let best = l.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
            let w1 = temperature_weights(&l, Temperature::Finite(t1)).unwrap();
            let w2 = temperature_weights(&l, Temperature::Finite(t1 + dt)).unwrap();
            prop_assert!(w1[best] >= w2[best] - 1e-15);
        }

        #[test]
        fn mi_bounds_and_mixture_ll(seed in 0u64..10_000, m in 1usize..8, c in 2usize..6) {
            let gp = random_grid(seed, m, 5, c);
            let mi = mutual_information(&gp).unwrap();
            for v in &mi.per_example {
                prop_assert!(*v >= 0.0 && *v <= (c as f64).ln() + 1e-12);
            }
            let labels: Vec<usize> = (0..5).map(|i| i % c).collect();
            let mix = mean_log_likelihood(&gp.mixture(), &labels);
            let worst = gp.probs.iter().map(|p| mean_log_likelihood(p, &labels)).fold(f64::INFINITY, f64::min);
            prop_assert!(mix >= worst - 1e-12);
        }
    }
}
