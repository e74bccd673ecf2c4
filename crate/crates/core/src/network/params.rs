use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::{AdapterSite, InputSpec, NetworkSpec};
use crate::error::{check_dim, Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    /// `vocab x embed_dim`
    pub token_embedding: Array2<f64>,
    /// `seq_len x embed_dim`
    pub position_embedding: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseWeights {
    /// `d_out x d_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Frozen base model. Nothing in the crate mutates these after creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights {
    pub attention: Option<AttentionWeights>,
    pub dense: Vec<DenseWeights>,
}

const BIAS_STD: f64 = 0.5;

impl BaseWeights {
    /// Random base: weights `N(0, 1/d_in)`, biases `N(0, 0.25)`, embeddings
    /// standard normal.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, Stream::Base, 0);
        let attention = match spec.input {
            InputSpec::Dense { .. } => None,
            InputSpec::Tokens {
                vocab,
                seq_len,
                embed_dim,
            } => Some(AttentionWeights {
                token_embedding: gaussian(&mut rng, (vocab, embed_dim), 1.0),
                position_embedding: gaussian(&mut rng, (seq_len, embed_dim), 1.0),
                query: gaussian(&mut rng, (embed_dim, embed_dim), (embed_dim as f64).recip().sqrt()),
                key: gaussian(&mut rng, (embed_dim, embed_dim), (embed_dim as f64).recip().sqrt()),
                value: gaussian(&mut rng, (embed_dim, embed_dim), (embed_dim as f64).recip().sqrt()),
            }),
        };
        let dense = spec
            .layers
            .iter()
            .map(|l| DenseWeights {
                weight: gaussian(&mut rng, (l.d_out, l.d_in), (l.d_in as f64).recip().sqrt()),
                bias: gaussian(&mut rng, (1, l.d_out), BIAS_STD).row(0).to_owned(),
            })
            .collect();
        Ok(Self { attention, dense })
    }

    /// Flat arrays in storage order: attention (token, position, q, k, v) if
    /// present, then weight and bias of each dense layer.
    pub fn to_arrays(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        if let Some(att) = &self.attention {
            for m in [
                &att.token_embedding,
                &att.position_embedding,
                &att.query,
                &att.key,
                &att.value,
            ] {
                out.push(m.iter().copied().collect());
            }
        }
        for d in &self.dense {
            out.push(d.weight.iter().copied().collect());
            out.push(d.bias.to_vec());
        }
        out
    }

    pub fn from_arrays(spec: &NetworkSpec, arrays: &[Vec<f64>]) -> Result<Self> {
        let mut it = arrays.iter();
        let mut next = |shape: (usize, usize)| -> Result<Array2<f64>> {
            let data = it
                .next()
                .ok_or_else(|| Error::Format("too few base weight arrays".into()))?;
            check_dim("base weight array", shape.0 * shape.1, data.len())?;
            Ok(Array2::from_shape_vec(shape, data.clone()).expect("checked length"))
        };
        let attention = match spec.input {
            InputSpec::Dense { .. } => None,
            InputSpec::Tokens {
                vocab,
                seq_len,
                embed_dim,
            } => Some(AttentionWeights {
                token_embedding: next((vocab, embed_dim))?,
                position_embedding: next((seq_len, embed_dim))?,
                query: next((embed_dim, embed_dim))?,
                key: next((embed_dim, embed_dim))?,
                value: next((embed_dim, embed_dim))?,
            }),
        };
        let mut dense = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let weight = next((l.d_out, l.d_in))?;
            let bias = next((1, l.d_out))?.row(0).to_owned();
            dense.push(DenseWeights { weight, bias });
        }
        if it.next().is_some() {
            return Err(Error::Format("too many base weight arrays".into()));
        }
        let base = Self { attention, dense };
        if base.to_arrays().iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Format("base weights contain non-finite entries".into()));
        }
        Ok(base)
    }
}

fn gaussian<R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Low-rank factors of one adapted matrix. The update is `scaling * B A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// `rank x d_in`
    pub a: Array2<f64>,
    /// `d_out x rank`
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMatrix {
    A,
    B,
}

/// Where one flat adapter coordinate lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCoord {
    pub site: usize,
    pub matrix: FactorMatrix,
    pub row: usize,
    pub col: usize,
}

/// Bijection between the flat adapter vector and per-site `(A, B)`.
/// Layout is site-major, `A` before `B`, row-major within each matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayout {
    sites: Vec<AdapterSite>,
    offsets: Vec<usize>,
    dim: usize,
}

impl AdapterLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let sites = spec.adapter_sites();
        let mut offsets = Vec::with_capacity(sites.len());
        let mut dim = 0;
        for s in &sites {
            offsets.push(dim);
            dim += s.num_params();
        }
        Self {
            sites,
            offsets,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sites(&self) -> &[AdapterSite] {
        &self.sites
    }

    pub fn locate(&self, index: usize) -> Result<ParamCoord> {
        if index >= self.dim {
            return Err(Error::domain(format!("coordinate {index} outside [0, {})", self.dim)));
        }
        let site = self.offsets.partition_point(|&o| o <= index) - 1;
        let s = &self.sites[site];
        let local = index - self.offsets[site];
        let a_len = s.rank * s.d_in;
        Ok(if local < a_len {
            ParamCoord {
                site,
                matrix: FactorMatrix::A,
                row: local / s.d_in,
                col: local % s.d_in,
            }
        } else {
            let local = local - a_len;
            ParamCoord {
                site,
                matrix: FactorMatrix::B,
                row: local / s.rank,
                col: local % s.rank,
            }
        })
    }

    pub fn unflatten(&self, theta: &Array1<f64>) -> Result<Vec<LoraFactors>> {
        check_dim("adapter vector", self.dim, theta.len())?;
        Ok(self
            .sites
            .iter()
            .zip(&self.offsets)
            .map(|(s, &off)| {
                let a_len = s.rank * s.d_in;
                let a = theta.slice(s![off..off + a_len]).to_owned();
                let b = theta.slice(s![off + a_len..off + s.num_params()]).to_owned();
                LoraFactors {
                    a: a.into_shape_with_order((s.rank, s.d_in)).expect("layout length"),
                    b: b.into_shape_with_order((s.d_out, s.rank)).expect("layout length"),
                }
            })
            .collect())
    }

    pub fn flatten(&self, factors: &[LoraFactors]) -> Result<Array1<f64>> {
        check_dim("adapter site count", self.sites.len(), factors.len())?;
        let mut out = Vec::with_capacity(self.dim);
        for (s, f) in self.sites.iter().zip(factors) {
            if f.a.dim() != (s.rank, s.d_in) || f.b.dim() != (s.d_out, s.rank) {
                return Err(Error::Dimension {
                    what: "adapter factor shape",
                    expected: s.num_params(),
                    got: f.a.len() + f.b.len(),
                });
            }
            out.extend(f.a.iter());
            out.extend(f.b.iter());
        }
        Ok(Array1::from(out))
    }

    /// Fresh adapter: every `A` drawn from `N(0, std^2)` with
    /// `std = a_init_scale / sqrt(d_in)`, every `B` zero, so the update
    /// `B A` starts at exactly zero.
    pub fn init_adapter<R: Rng>(&self, rng: &mut R, a_init_scale: f64) -> Array1<f64> {
        let mut theta = Array1::zeros(self.dim);
        for (s, &off) in self.sites.iter().zip(&self.offsets) {
            let normal = Normal::new(0.0, a_init_scale / (s.d_in as f64).sqrt())
                .expect("finite positive std");
            for x in theta.slice_mut(s![off..off + s.rank * s.d_in]).iter_mut() {
                *x = normal.sample(rng);
            }
        }
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::{Activation, DenseLayerSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input: InputSpec::Dense { dim: 2 },
            layers: vec![DenseLayerSpec {
                d_in: 2,
                d_out: 2,
                activation: Activation::Identity,
                adapted: true,
            }],
            rank: 1,
            alpha: 1.0,
            num_classes: 2,
        }
    }

    #[test]
    fn index_map_single_layer() {
        let layout = AdapterLayout::new(&tiny());
        assert_eq!(layout.dim(), 4);
        let coords: Vec<_> = (0..4).map(|i| layout.locate(i).unwrap()).collect();
        let expect = [
            (FactorMatrix::A, 0, 0),
            (FactorMatrix::A, 0, 1),
            (FactorMatrix::B, 0, 0),
            (FactorMatrix::B, 1, 0),
        ];
        for (c, (m, r, col)) in coords.iter().zip(expect) {
            assert_eq!((c.site, c.matrix, c.row, c.col), (0, m, r, col));
        }
        assert!(layout.locate(4).is_err());
    }

    #[test]
    fn single_coordinate_changes_single_entry() {
        let layout = AdapterLayout::new(&NetworkSpec::mlp(3, &[5, 4], 3));
        let theta = Array1::from_shape_fn(layout.dim(), |i| i as f64 * 0.01);
        let before = layout.unflatten(&theta).unwrap();
        for idx in [0, 7, layout.dim() / 2, layout.dim() - 1] {
            let mut bumped = theta.clone();
            bumped[idx] += 1.0;
            let after = layout.unflatten(&bumped).unwrap();
            let coord = layout.locate(idx).unwrap();
            let mut changed = 0;
            for (site, (x, y)) in before.iter().zip(&after).enumerate() {
                for (m, (u, v)) in [(FactorMatrix::A, (&x.a, &y.a)), (FactorMatrix::B, (&x.b, &y.b))] {
                    for (((r, c), p), q) in u.indexed_iter().zip(v.iter()) {
                        if p != q {
                            changed += 1;
                            assert_eq!((site, m, r, c), (coord.site, coord.matrix, coord.row, coord.col));
                        }
                    }
                }
            }
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn init_has_zero_b() {
        let spec = NetworkSpec::mlp(3, &[6], 2);
        let layout = AdapterLayout::new(&spec);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let theta = layout.init_adapter(&mut rng, 1.0);
        for f in layout.unflatten(&theta).unwrap() {
            assert!(f.b.iter().all(|&x| x == 0.0));
            assert!(f.a.iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn base_arrays_round_trip() {
        let spec = NetworkSpec::attention(3, 4, 6, &[5], 2);
        let base = BaseWeights::random(&spec, 9).unwrap();
        let back = BaseWeights::from_arrays(&spec, &base.to_arrays()).unwrap();
        assert_eq!(base, back);
        assert!(BaseWeights::from_arrays(&spec, &base.to_arrays()[1..]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(values in proptest::collection::vec(-10.0f64..10.0, 2 * 9 + 4 * 11 + 2 * 6)) {
            let layout = AdapterLayout::new(&NetworkSpec::mlp(2, &[7, 4], 2).with_rank(4, 8.0));
            prop_assert_eq!(layout.dim(), values.len());
            let theta = Array1::from(values);
            let back = layout.flatten(&layout.unflatten(&theta).unwrap()).unwrap();
            prop_assert_eq!(back, theta);
        }
    }
}
