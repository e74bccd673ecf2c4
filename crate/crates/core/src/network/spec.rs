use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default adapter rank.
pub const DEFAULT_RANK: usize = 8;
/// Default adapter scaling numerator; updates are scaled by `alpha / rank`.
pub const DEFAULT_ALPHA: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayerSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub adapted: bool,
}

/// How raw examples enter the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// Real feature vectors fed straight into the dense stack.
    Dense { dim: usize },
    /// Token sequences: frozen token and position embeddings, one
    /// self-attention head with adapted query/value projections, residual,
    /// mean pooling, then the dense stack.
    Tokens {
        vocab: usize,
        seq_len: usize,
        embed_dim: usize,
    },
}

impl InputSpec {
    /// Width of the vector handed to the first dense layer.
    pub fn feature_dim(&self) -> usize {
        match *self {
            InputSpec::Dense { dim } => dim,
            InputSpec::Tokens { embed_dim, .. } => embed_dim,
        }
    }
}

/// Identifies one weight matrix that carries a low-rank adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteKind {
    Query,
    Value,
    Dense(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterSite {
    pub kind: SiteKind,
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
}

impl AdapterSite {
    /// Number of adapter coordinates: `rank * (d_in + d_out)`.
    pub fn num_params(&self) -> usize {
        self.rank * (self.d_in + self.d_out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputSpec,
    pub layers: Vec<DenseLayerSpec>,
    pub rank: usize,
    pub alpha: f64,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// SiLU MLP over dense inputs with every layer adapted and an identity
    /// output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        Self {
            input: InputSpec::Dense { dim: input_dim },
            layers: dense_stack(input_dim, hidden, num_classes),
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            num_classes,
        }
    }

    /// Attention block over token sequences followed by an adapted MLP head.
    pub fn attention(
        vocab: usize,
        seq_len: usize,
        embed_dim: usize,
        hidden: &[usize],
        num_classes: usize,
    ) -> Self {
        Self {
            input: InputSpec::Tokens {
                vocab,
                seq_len,
                embed_dim,
            },
            layers: dense_stack(embed_dim, hidden, num_classes),
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            num_classes,
        }
    }

    pub fn with_rank(mut self, rank: usize, alpha: f64) -> Self {
        self.rank = rank;
        self.alpha = alpha;
        self
    }

    /// Factor applied to `B A`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        if self.rank == 0 {
            return Err(Error::config("adapter rank must be positive"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha must be finite"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("network needs at least one dense layer"));
        }
        match self.input {
            InputSpec::Dense { dim: 0 } => {
                return Err(Error::config("input dimension must be positive"))
            }
            InputSpec::Tokens {
                vocab,
                seq_len,
                embed_dim,
            } if vocab == 0 || seq_len == 0 || embed_dim == 0 => {
                return Err(Error::config("token input sizes must be positive"))
            }
            _ => {}
        }
        let mut width = self.input.feature_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.d_in != width || layer.d_out == 0 {
                return Err(Error::config(format!(
                    "layer {i} expects width {} but receives {width}",
                    layer.d_in
                )));
            }
            width = layer.d_out;
        }
        if width != self.num_classes {
            return Err(Error::config(format!(
                "last layer emits {width} logits for {} classes",
                self.num_classes
            )));
        }
        if self.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::config("the output layer must use the identity activation"));
        }
        Ok(())
    }

    /// Adapted weight matrices in flat-layout order: query, value, then dense
    /// layers front to back. Each site's rank is clamped to
    /// `min(rank, d_in, d_out)`.
    pub fn adapter_sites(&self) -> Vec<AdapterSite> {
        let mut sites = Vec::new();
        let site = |kind, d_in: usize, d_out: usize| AdapterSite {
            kind,
            d_in,
            d_out,
            rank: self.rank.min(d_in).min(d_out),
        };
        if let InputSpec::Tokens { embed_dim, .. } = self.input {
            sites.push(site(SiteKind::Query, embed_dim, embed_dim));
            sites.push(site(SiteKind::Value, embed_dim, embed_dim));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.adapted {
                sites.push(site(SiteKind::Dense(i), layer.d_in, layer.d_out));
            }
        }
        sites
    }

    /// Total adapter dimension `D`.
    pub fn adapter_dim(&self) -> usize {
        self.adapter_sites().iter().map(AdapterSite::num_params).sum()
    }
}

fn dense_stack(input: usize, hidden: &[usize], classes: usize) -> Vec<DenseLayerSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut width = input;
    for &h in hidden {
        layers.push(DenseLayerSpec {
            d_in: width,
            d_out: h,
            activation: Activation::Silu,
            adapted: true,
        });
        width = h;
    }
    layers.push(DenseLayerSpec {
        d_in: width,
        d_out: classes,
        activation: Activation::Identity,
        adapted: true,
    });
    layers
}
