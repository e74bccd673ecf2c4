use ndarray::{Array1, Array2};

use crate::curve::{control_point_weights, ControlPointSet};
use crate::data::Features;
use crate::error::{check_dim, Result};
use crate::network::{cross_entropy, EffectiveWeights, ForwardPass, LoraNetwork, NoiseDraw};

/// Held standard-normal draw plus the magnitude to scale it with.
#[derive(Clone, Copy)]
pub struct NoiseSource<'a> {
    pub draw: &'a NoiseDraw,
    pub rho: f64,
}

/// Forward pass at one curve point, kept around for the backward pass.
pub(crate) struct PointPass {
    theta: Array1<f64>,
    weights: EffectiveWeights,
    pub pass: ForwardPass,
    pub loss: f64,
    pub d_logits: Array2<f64>,
}

impl PointPass {
    pub fn adapter_gradient(&self, net: &LoraNetwork, d_logits: &Array2<f64>) -> Result<Array1<f64>> {
        let site_grads = net.backward(&self.weights, &self.pass, d_logits)?;
        let factors = net.layout().unflatten(&self.theta)?;
        net.adapter_gradient(&factors, &site_grads)
    }
}

pub(crate) fn point_pass(
    net: &LoraNetwork,
    points: &ControlPointSet,
    inputs: &Features,
    labels: &[usize],
    t: f64,
    noise: Option<NoiseSource<'_>>,
) -> Result<PointPass> {
    let theta = points.eval(t)?;
    let mut weights = net.materialize(&theta)?;
    if let Some(n) = noise.filter(|n| n.rho > 0.0) {
        let eps = n.draw.scale(net, &weights, n.rho);
        net.perturb(&mut weights, &eps)?;
    }
    let pass = net.forward(&weights, inputs)?;
    let (loss, d_logits) = cross_entropy(&pass, labels, net.spec().num_classes)?;
    Ok(PointPass {
        theta,
        weights,
        pass,
        loss,
        d_logits,
    })
}

/// Gradient with respect to every control point; `None` on frozen points.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGradient {
    pub per_point: Vec<Option<Array1<f64>>>,
}

impl CurveGradient {
    pub fn zeros(points: &ControlPointSet) -> Self {
        Self {
            per_point: points
                .frozen()
                .iter()
                .map(|&f| (!f).then(|| Array1::zeros(points.dim())))
                .collect(),
        }
    }

    /// Route a gradient taken at the curve point `t` to the control points:
    /// point `i` receives `b_i(t) * grad`.
    pub fn accumulate(&mut self, points: &ControlPointSet, t: f64, grad: &Array1<f64>) -> Result<()> {
        check_dim("adapter gradient", points.dim(), grad.len())?;
        for (index, w) in control_point_weights(t, points.config())? {
            if let Some(g) = self.per_point[index].as_mut() {
                g.scaled_add(w, grad);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.per_point.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct CurveLoss {
    pub t: f64,
    pub loss: f64,
    pub gradient: CurveGradient,
    pub probs: Array2<f64>,
}

/// Mean cross-entropy at the curve point `t` and its gradient with respect to
/// the control points.
pub fn curve_loss_and_gradient(
    net: &LoraNetwork,
    points: &ControlPointSet,
    inputs: &Features,
    labels: &[usize],
    t: f64,
    noise: Option<NoiseSource<'_>>,
) -> Result<CurveLoss> {
    let p = point_pass(net, points, inputs, labels, t, noise)?;
    let grad = p.adapter_gradient(net, &p.d_logits)?;
    let mut gradient = CurveGradient::zeros(points);
    gradient.accumulate(points, t, &grad)?;
    Ok(CurveLoss {
        t,
        loss: p.loss,
        gradient,
        probs: p.pass.probs,
    })
}
