//! Deterministic synthetic classification tasks and splitting.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{stream_rng, Stream};

/// Inputs of a batch of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Features {
    /// `n x d` real features.
    Dense(Array2<f64>),
    /// `n x seq_len` token ids.
    Tokens(Array2<usize>),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Dense(x) => x.nrows(),
            Features::Tokens(x) => x.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Features {
        match self {
            Features::Dense(x) => Features::Dense(x.select(Axis(0), rows)),
            Features::Tokens(x) => Features::Tokens(x.select(Axis(0), rows)),
        }
    }

    fn empty_like(&self) -> Features {
        self.select(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub features: Features,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(features: Features, labels: Vec<usize>) -> Result<Self> {
        check_dim("label count", features.len(), labels.len())?;
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            features: self.features.select(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Write `x0..x{d-1},label` (or `tok0..`) rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::csv_writer(path)?;
        let (prefix, width) = match &self.features {
            Features::Dense(x) => ("x", x.ncols()),
            Features::Tokens(x) => ("tok", x.ncols()),
        };
        let mut header: Vec<String> = (0..width).map(|j| format!("{prefix}{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (i, &label) in self.labels.iter().enumerate() {
            let mut row: Vec<String> = match &self.features {
                Features::Dense(x) => x.row(i).iter().map(|v| v.to_string()).collect(),
                Features::Tokens(x) => x.row(i).iter().map(|v| v.to_string()).collect(),
            };
            row.push(label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    fn from_generated(name: String, num_classes: usize, train: Split, test: Split) -> Self {
        let val = Split {
            features: train.features.empty_like(),
            labels: Vec::new(),
        };
        Self {
            name,
            num_classes,
            train,
            val,
            test,
        }
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            split.write_csv(&dir.join(format!("{}_{name}.csv", self.name)))?;
        }
        Ok(())
    }
}

/// `C` isotropic unit-variance Gaussians centred on the vertices of a regular
/// simplex with pairwise centre distance `separation`. Labels are assigned
/// round-robin, so class counts differ by at most one. The test split holds
/// `n` further draws from an independent stream.
pub fn gaussian_blobs(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::domain("blobs need at least two classes"));
    }
    if !(separation > 0.0) {
        return Err(Error::domain("blob separation must be positive"));
    }
    if d + 1 < classes {
        return Err(Error::domain(format!(
            "{classes} simplex vertices need at least {} dimensions, got {d}",
            classes - 1
        )));
    }
    let centres = simplex_vertices(classes, d, separation);
    let draw = |index: u64| {
        let mut rng = stream_rng(seed, Stream::Data, index);
        let mut x = Array2::zeros((n, d));
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        for (i, &y) in labels.iter().enumerate() {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = centres[[y, j]] + z;
            }
        }
        Split {
            features: Features::Dense(x),
            labels,
        }
    };
    Ok(Dataset::from_generated(
        format!("blobs{classes}"),
        classes,
        draw(0),
        draw(1),
    ))
}

/// Rows are the vertices of a regular simplex centred at the origin with
/// edge length `edge`, embedded in the first `classes - 1` coordinates.
pub fn simplex_vertices(classes: usize, d: usize, edge: f64) -> Array2<f64> {
    // Helmert basis of the sum-zero subspace of R^C.
    let mut basis = Array2::<f64>::zeros((classes - 1, classes));
    for k in 1..classes {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for j in 0..k {
            basis[[k - 1, j]] = 1.0 / norm;
        }
        basis[[k - 1, k]] = -(k as f64) / norm;
    }
    // e_i - e_j has length sqrt(2) and the projection is an isometry on the subspace.
    let scale = edge / 2f64.sqrt();
    let mut out = Array2::zeros((classes, d));
    for i in 0..classes {
        for k in 0..classes - 1 {
            out[[i, k]] = scale * basis[[k, i]];
        }
    }
    out
}

/// Radius inside which the quadrant label is flipped; it halves the area of
/// the unit disk.
const RING_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Points uniform on the unit disk labelled by quadrant parity XOR ring
/// membership, then jittered by isotropic Gaussian `noise`. The label is
/// invariant under `x -> -x` and no half-plane does much better than chance.
pub fn xor_rings(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if !(noise >= 0.0) {
        return Err(Error::domain("noise must be non-negative"));
    }
    let draw = |index: u64| {
        let mut rng = stream_rng(seed, Stream::Data, index);
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let r = rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let (p, q) = (r * phi.cos(), r * phi.sin());
            labels.push(xor_ring_label(p, q));
            let zp: f64 = StandardNormal.sample(&mut rng);
            let zq: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = p + noise * zp;
            x[[i, 1]] = q + noise * zq;
        }
        Split {
            features: Features::Dense(x),
            labels,
        }
    };
    Ok(Dataset::from_generated("xor_rings".into(), 2, draw(0), draw(1)))
}

pub fn xor_ring_label(x: f64, y: f64) -> usize {
    let same_sign = x * y > 0.0;
    let inner = x * x + y * y < RING_RADIUS * RING_RADIUS;
    usize::from(same_sign != inner)
}

/// Token id whose count parity is the label.
pub const MARKED_TOKEN: usize = 1;

/// Uniform token sequences labelled by the parity of the number of
/// occurrences of [`MARKED_TOKEN`].
pub fn parity_sequences(n: usize, seq_len: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    if seq_len < 2 {
        return Err(Error::domain("parity sequences need length >= 2"));
    }
    if vocab < 2 {
        return Err(Error::domain("parity sequences need at least two symbols"));
    }
    let draw = |index: u64| {
        let mut rng = stream_rng(seed, Stream::Data, index);
        let tokens = Array2::from_shape_simple_fn((n, seq_len), || rng.random_range(0..vocab));
        let labels = tokens.rows().into_iter().map(|r| parity_label(&r.to_vec())).collect();
        Split {
            features: Features::Tokens(tokens),
            labels,
        }
    };
    Ok(Dataset::from_generated(format!("parity{seq_len}"), 2, draw(0), draw(1)))
}

pub fn parity_label(tokens: &[usize]) -> usize {
    tokens.iter().filter(|&&t| t == MARKED_TOKEN).count() % 2
}

/// Shuffle the training split with `seed` and move the first
/// `round(fraction * n)` examples into the validation split. Any previous
/// validation examples are returned to training first.
pub fn split(mut dataset: Dataset, val_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::domain(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    if !dataset.val.is_empty() {
        dataset.train = concat(&dataset.train, &dataset.val)?;
    }
    let n = dataset.train.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val >= n {
        return Err(Error::domain("validation fraction leaves no training data"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    dataset.val = dataset.train.select(&val_idx);
    dataset.train = dataset.train.select(&train_idx);
    Ok(dataset)
}

fn concat(a: &Split, b: &Split) -> Result<Split> {
    let features = match (&a.features, &b.features) {
        (Features::Dense(x), Features::Dense(y)) => Features::Dense(
            ndarray::concatenate(Axis(0), &[x.view(), y.view()])
                .map_err(|e| Error::domain(e.to_string()))?,
        ),
        (Features::Tokens(x), Features::Tokens(y)) => Features::Tokens(
            ndarray::concatenate(Axis(0), &[x.view(), y.view()])
                .map_err(|e| Error::domain(e.to_string()))?,
        ),
        _ => return Err(Error::domain("cannot join dense and token splits")),
    };
    Ok(Split {
        features,
        labels: a.labels.iter().chain(&b.labels).copied().collect(),
    })
}

/// Class-mean nearest-centroid accuracy of `split` against `centres`.
pub fn nearest_centre_accuracy(split: &Split, centres: &Array2<f64>) -> f64 {
    let Features::Dense(x) = &split.features else {
        return 0.0;
    };
    let correct = x
        .rows()
        .into_iter()
        .zip(&split.labels)
        .filter(|(row, &y)| {
            let best = (0..centres.nrows())
                .map(|c| {
                    let diff: Array1<f64> = &row.to_owned() - &centres.row(c);
                    (c, diff.dot(&diff))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(y)
        })
        .count();
    correct as f64 / split.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = gaussian_blobs(301, 3, 3, 4.0, 11).unwrap();
        let b = gaussian_blobs(301, 3, 3, 4.0, 11).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 3];
        for &y in &a.train.labels {
            counts[y] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_ne!(a.train, a.test);
    }

    #[test]
    fn blob_simplex_geometry() {
        let v = simplex_vertices(4, 5, 3.0);
        for i in 0..4 {
            for j in 0..i {
                let d = &v.row(i) - &v.row(j);
                assert!((d.dot(&d).sqrt() - 3.0).abs() < 1e-12);
            }
        }
        assert!(v.column(3).iter().all(|&x| x == 0.0));
        assert!(gaussian_blobs(10, 1, 3, 1.0, 0).is_err());
        assert!(gaussian_blobs(10, 2, 1, 1.0, 0).is_err());
        assert!(gaussian_blobs(10, 2, 2, 0.0, 0).is_err());
    }

    #[test]
    fn well_separated_blobs_are_nearly_bayes_perfect() {
        let data = gaussian_blobs(4000, 2, 2, 10.0, 3).unwrap();
        let centres = simplex_vertices(2, 2, 10.0);
        assert!(nearest_centre_accuracy(&data.test, &centres) >= 0.999);
    }

    #[test]
    fn xor_rings_symmetry_and_determinism() {
        assert_eq!(xor_rings(50, 0.1, 2).unwrap(), xor_rings(50, 0.1, 2).unwrap());
        let data = xor_rings(500, 0.0, 5).unwrap();
        let Features::Dense(x) = &data.train.features else { panic!() };
        for (row, &y) in x.rows().into_iter().zip(&data.train.labels) {
            assert_eq!(xor_ring_label(-row[0], -row[1]), y);
        }
        let ones = data.train.labels.iter().sum::<usize>() as f64 / 500.0;
        assert!((0.4..0.6).contains(&ones), "class balance {ones}");
    }

    #[test]
    fn parity_of_two_binary_tokens_is_xor() {
        let data = parity_sequences(64, 2, 2, 1).unwrap();
        let Features::Tokens(x) = &data.train.features else { panic!() };
        let mut seen = std::collections::BTreeSet::new();
        for (row, &y) in x.rows().into_iter().zip(&data.train.labels) {
            assert_eq!(y, row[0] ^ row[1]);
            seen.insert((row[0], row[1]));
        }
        assert_eq!(seen.len(), 4);
        assert_eq!(parity_sequences(20, 5, 3, 4).unwrap(), parity_sequences(20, 5, 3, 4).unwrap());
        assert!(parity_sequences(5, 1, 2, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let data = gaussian_blobs(1000, 2, 2, 3.0, 0).unwrap();
        let s = split(data.clone(), 0.1, 4).unwrap();
        assert_eq!(s.val.len(), 100);
        assert_eq!(s.train.len(), 900);
        assert_eq!(s, split(data.clone(), 0.1, 4).unwrap());
        let z = split(data.clone(), 0.0, 4).unwrap();
        assert!(z.val.is_empty());
        assert!(split(data.clone(), 1.0, 4).is_err());
        // re-splitting starts from the full training pool
        let again = split(s, 0.2, 5).unwrap();
        assert_eq!(again.train.len() + again.val.len(), 1000);
    }
}
