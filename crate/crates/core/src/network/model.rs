use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{AdapterLayout, BaseWeights, LoraFactors};
use super::spec::{Activation, InputSpec, NetworkSpec, SiteKind};
use crate::data::Features;
use crate::error::{check_dim, Error, Result};

/// Frozen base plus adapter layout: everything needed to turn a flat adapter
/// vector into predictions and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraNetwork {
    spec: NetworkSpec,
    base: BaseWeights,
    layout: AdapterLayout,
}

/// Weight matrices in effect for one forward pass. Only adapted matrices are
/// owned here; everything else is read from the base.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveWeights {
    pub query: Option<Array2<f64>>,
    pub value: Option<Array2<f64>>,
    pub dense: Vec<Array2<f64>>,
}

impl EffectiveWeights {
    pub fn site(&self, kind: SiteKind) -> &Array2<f64> {
        match kind {
            SiteKind::Query => self.query.as_ref().expect("query site without attention"),
            SiteKind::Value => self.value.as_ref().expect("value site without attention"),
            SiteKind::Dense(i) => &self.dense[i],
        }
    }

    fn site_mut(&mut self, kind: SiteKind) -> &mut Array2<f64> {
        match kind {
            SiteKind::Query => self.query.as_mut().expect("query site without attention"),
            SiteKind::Value => self.value.as_mut().expect("value site without attention"),
            SiteKind::Dense(i) => &mut self.dense[i],
        }
    }
}

struct AttentionCache {
    x: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    p: Array2<f64>,
}

/// Output of a forward pass, holding what the backward pass needs.
pub struct ForwardPass {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub log_probs: Array2<f64>,
    attention: Option<Vec<AttentionCache>>,
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Mean cross-entropy, its gradient and the predictions it was computed from.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Array1<f64>,
    pub probs: Array2<f64>,
}

impl LoraNetwork {
    pub fn new(spec: NetworkSpec, base: BaseWeights) -> Result<Self> {
        spec.validate()?;
        // round-trip through storage order validates every shape
        let checked = BaseWeights::from_arrays(&spec, &base.to_arrays())?;
        let layout = AdapterLayout::new(&spec);
        Ok(Self {
            spec,
            base: checked,
            layout,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn base(&self) -> &BaseWeights {
        &self.base
    }

    pub fn layout(&self) -> &AdapterLayout {
        &self.layout
    }

    pub fn adapter_dim(&self) -> usize {
        self.layout.dim()
    }

    /// `W = W0 + (alpha / r) B A` on every adapted matrix; other matrices are
    /// untouched.
    pub fn materialize(&self, theta: &Array1<f64>) -> Result<EffectiveWeights> {
        let factors = self.layout.unflatten(theta)?;
        let att = self.base.attention.as_ref();
        let mut weights = EffectiveWeights {
            query: att.map(|a| a.query.clone()),
            value: att.map(|a| a.value.clone()),
            dense: self.base.dense.iter().map(|d| d.weight.clone()).collect(),
        };
        let scale = self.spec.scaling();
        for (site, f) in self.layout.sites().iter().zip(&factors) {
            let w = weights.site_mut(site.kind);
            ndarray::linalg::general_mat_mul(scale, &f.b, &f.a, 1.0, w);
        }
        Ok(weights)
    }

    /// Add per-site perturbations (same order as the adapter sites).
    pub fn perturb(&self, weights: &mut EffectiveWeights, noise: &[Array2<f64>]) -> Result<()> {
        check_dim("noise site count", self.layout.sites().len(), noise.len())?;
        for (site, eps) in self.layout.sites().iter().zip(noise) {
            let w = weights.site_mut(site.kind);
            check_dim("noise matrix size", w.len(), eps.len())?;
            *w += eps;
        }
        Ok(())
    }

    pub fn forward(&self, weights: &EffectiveWeights, inputs: &Features) -> Result<ForwardPass> {
        if inputs.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let (mut h, attention) = match (&self.spec.input, inputs) {
            (InputSpec::Dense { dim }, Features::Dense(x)) => {
                check_dim("input features", *dim, x.ncols())?;
                (x.clone(), None)
            }
            (InputSpec::Tokens { .. }, Features::Tokens(tokens)) => {
                let (pooled, cache) = self.attention_forward(weights, tokens.view())?;
                (pooled, Some(cache))
            }
            _ => return Err(Error::domain("input kind does not match the network")),
        };
        let mut layer_inputs = Vec::with_capacity(self.spec.layers.len());
        let mut pre_activations = Vec::with_capacity(self.spec.layers.len());
        for (i, (layer, w)) in self.spec.layers.iter().zip(&weights.dense).enumerate() {
            let mut z = h.dot(&w.t());
            z += &self.base.dense[i].bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: format!("dense[{i}]"),
                });
            }
            let next = match layer.activation {
                Activation::Silu => z.mapv(silu),
                Activation::Identity => z.clone(),
            };
            layer_inputs.push(std::mem::replace(&mut h, next));
            pre_activations.push(z);
        }
        let logits = h;
        let log_probs = log_softmax(&logits);
        let probs = log_probs.mapv(f64::exp);
        Ok(ForwardPass {
            logits,
            probs,
            log_probs,
            attention,
            layer_inputs,
            pre_activations,
        })
    }

    fn attention_forward(
        &self,
        weights: &EffectiveWeights,
        tokens: ArrayView2<usize>,
    ) -> Result<(Array2<f64>, Vec<AttentionCache>)> {
        let att = self.base.attention.as_ref().expect("token input has attention weights");
        let (vocab, embed) = att.token_embedding.dim();
        check_dim("sequence length", att.position_embedding.nrows(), tokens.ncols())?;
        let wq = weights.site(SiteKind::Query);
        let wv = weights.site(SiteKind::Value);
        let inv_sqrt = 1.0 / (embed as f64).sqrt();
        let mut pooled = Array2::zeros((tokens.nrows(), embed));
        let mut caches = Vec::with_capacity(tokens.nrows());
        for (n, seq) in tokens.rows().into_iter().enumerate() {
            if let Some(&bad) = seq.iter().find(|&&t| t >= vocab) {
                return Err(Error::domain(format!("token {bad} outside vocabulary of {vocab}")));
            }
            let ids = seq.to_vec();
            let x = att.token_embedding.select(Axis(0), &ids) + &att.position_embedding;
            let q = x.dot(&wq.t());
            let k = x.dot(&att.key.t());
            let v = x.dot(&wv.t());
            let mut scores = q.dot(&k.t());
            scores *= inv_sqrt;
            let p = log_softmax(&scores).mapv(f64::exp);
            let y = &x + &p.dot(&v);
            pooled.row_mut(n).assign(&y.mean_axis(Axis(0)).expect("non-empty sequence"));
            caches.push(AttentionCache { x, k, v, p });
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "attention".into(),
            });
        }
        Ok((pooled, caches))
    }

    /// Reverse pass from `d loss / d logits` to `d loss / d W` for every
    /// adapted matrix, in site order.
    pub fn backward(
        &self,
        weights: &EffectiveWeights,
        pass: &ForwardPass,
        d_logits: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        check_dim("logit gradient rows", pass.logits.nrows(), d_logits.nrows())?;
        let mut dense_grads: Vec<Option<Array2<f64>>> = vec![None; self.spec.layers.len()];
        let mut dz = d_logits.clone();
        let mut d_input = None;
        for i in (0..self.spec.layers.len()).rev() {
            if self.spec.layers[i].adapted {
                dense_grads[i] = Some(dz.t().dot(&pass.layer_inputs[i]));
            }
            if i == 0 && pass.attention.is_none() {
                break;
            }
            let dh = dz.dot(&weights.dense[i]);
            if i == 0 {
                d_input = Some(dh);
                break;
            }
            let prev = &pass.pre_activations[i - 1];
            dz = match self.spec.layers[i - 1].activation {
                Activation::Silu => {
                    let mut g = dh;
                    Zip::from(&mut g).and(prev).for_each(|g, &z| *g *= silu_grad(z));
                    g
                }
                Activation::Identity => dh,
            };
        }

        let mut query_grad = None;
        let mut value_grad = None;
        if let (Some(caches), Some(d_pooled)) = (&pass.attention, d_input) {
            let (gq, gv) = self.attention_backward(caches, &d_pooled);
            query_grad = Some(gq);
            value_grad = Some(gv);
        }

        let mut out = Vec::with_capacity(self.layout.sites().len());
        for site in self.layout.sites() {
            let g = match site.kind {
                SiteKind::Query => query_grad.take(),
                SiteKind::Value => value_grad.take(),
                SiteKind::Dense(i) => dense_grads[i].take(),
            };
            out.push(g.expect("gradient computed for every adapted site"));
        }
        Ok(out)
    }

    fn attention_backward(
        &self,
        caches: &[AttentionCache],
        d_pooled: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let embed = d_pooled.ncols();
        let inv_sqrt = 1.0 / (embed as f64).sqrt();
        let mut gq = Array2::zeros((embed, embed));
        let mut gv = Array2::zeros((embed, embed));
        for (c, dp) in caches.iter().zip(d_pooled.rows()) {
            let len = c.x.nrows();
            // y = x + P V, pooled = mean over positions
            let dy = Array2::from_shape_fn((len, embed), |(_, j)| dp[j] / len as f64);
            let d_attn = dy.dot(&c.v.t());
            let dv = c.p.t().dot(&dy);
            let row_dot = (&d_attn * &c.p).sum_axis(Axis(1));
            let mut ds = d_attn;
            Zip::from(ds.rows_mut())
                .and(c.p.rows())
                .and(&row_dot)
                .for_each(|mut d, p, &r| {
                    Zip::from(&mut d).and(&p).for_each(|d, &p| *d = p * (*d - r));
                });
            ds *= inv_sqrt;
            let dq = ds.dot(&c.k);
            gq += &dq.t().dot(&c.x);
            gv += &dv.t().dot(&c.x);
        }
        (gq, gv)
    }

    /// Chain rule from `d loss / d W` to the flat adapter coordinates:
    /// `dA = s B^T G`, `dB = s G A^T`.
    pub fn adapter_gradient(&self, factors: &[LoraFactors], site_grads: &[Array2<f64>]) -> Result<Array1<f64>> {
        check_dim("site gradient count", factors.len(), site_grads.len())?;
        let s = self.spec.scaling();
        let grads: Vec<LoraFactors> = factors
            .iter()
            .zip(site_grads)
            .map(|(f, g)| LoraFactors {
                a: f.b.t().dot(g) * s,
                b: g.dot(&f.a.t()) * s,
            })
            .collect();
        self.layout.flatten(&grads)
    }

    pub fn predict(&self, theta: &Array1<f64>, inputs: &Features) -> Result<Array2<f64>> {
        Ok(self.forward(&self.materialize(theta)?, inputs)?.probs)
    }

    /// Mean cross-entropy and its exact gradient with respect to `theta`.
    /// `noise`, when given, perturbs the adapted matrices for this pass only;
    /// it is treated as a constant by the gradient.
    pub fn loss_and_gradient(
        &self,
        theta: &Array1<f64>,
        inputs: &Features,
        labels: &[usize],
        noise: Option<&[Array2<f64>]>,
    ) -> Result<LossGradient> {
        let mut weights = self.materialize(theta)?;
        if let Some(eps) = noise {
            self.perturb(&mut weights, eps)?;
        }
        let pass = self.forward(&weights, inputs)?;
        let (loss, d_logits) = cross_entropy(&pass, labels, self.spec.num_classes)?;
        let site_grads = self.backward(&weights, &pass, &d_logits)?;
        let factors = self.layout.unflatten(theta)?;
        let gradient = self.adapter_gradient(&factors, &site_grads)?;
        Ok(LossGradient {
            loss,
            gradient,
            probs: pass.probs,
        })
    }
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy(pass: &ForwardPass, labels: &[usize], classes: usize) -> Result<(f64, Array2<f64>)> {
    check_dim("label count", pass.logits.nrows(), labels.len())?;
    let n = labels.len() as f64;
    let mut grad = pass.probs.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::domain(format!("label {y} outside {classes} classes")));
        }
        loss -= pass.log_probs[[i, y]];
        grad[[i, y]] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

pub fn log_softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
