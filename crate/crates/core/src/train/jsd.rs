//! Two-point symmetric cross-entropy with a bounded Jensen–Shannon term.
//!
//! For a sampled `t1` the partner point is `t2 = (t1 + N_seg / 2) mod N_seg`.
//! The loss is `(CE(t1) + CE(t2)) / 2 + lambda * L_jsd`, where `L_jsd`
//! penalizes predictive distributions at `t1` and `t2` that are closer than
//! `tau` in Jensen–Shannon divergence.

use ndarray::{Array1, Array2, ArrayView1};

use super::config::{JsdClip, TrainConfig};
use super::curve_loss::{point_pass, CurveGradient, NoiseSource};
use crate::curve::ControlPointSet;
use crate::data::Features;
use crate::error::{Error, Result};
use crate::network::LoraNetwork;

/// Partner parameter half a curve length away.
pub fn partner_t(t1: f64, num_segments: usize) -> Result<f64> {
    if num_segments == 0 {
        return Err(Error::DegenerateCurve("partner point needs at least one segment".into()));
    }
    let n = num_segments as f64;
    Ok((t1 + n / 2.0) % n)
}

/// `JSD(p, q)` in nats with the `0 ln 0 = 0` convention.
pub fn js_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q.iter()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            d += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            d += 0.5 * b * (b / m).ln();
        }
    }
    d
}

/// Batch-mean divergence between two rows-of-distributions matrices.
pub fn mean_js_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let n = p.nrows() as f64;
    p.rows()
        .into_iter()
        .zip(q.rows())
        .map(|(a, b)| js_divergence(a, b))
        .sum::<f64>()
        / n
}

/// Value of the bounded penalty and its derivative with respect to the divergence.
pub fn jsd_penalty(divergence: f64, tau: f64, clip: JsdClip) -> (f64, f64) {
    let active = divergence < tau;
    let slope = if active { -1.0 } else { 0.0 };
    let value = match clip {
        JsdClip::Hinge => (tau - divergence).max(0.0),
        JsdClip::Cap => -divergence.min(tau),
    };
    (value, slope)
}

/// Gradient of the batch-mean divergence with respect to the logits behind `p`.
fn divergence_logit_grad(p: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    let n = p.nrows() as f64;
    let mut out = Array2::zeros(p.dim());
    for ((pr, qr), mut o) in p.rows().into_iter().zip(q.rows()).zip(out.rows_mut()) {
        // dD/dp_k = ln(p_k / m_k) / 2
        let g: Array1<f64> = pr
            .iter()
            .zip(qr.iter())
            .map(|(&a, &b)| if a > 0.0 { 0.5 * (a / (0.5 * (a + b))).ln() } else { 0.0 })
            .collect();
        let mean = pr.dot(&g);
        for ((o, &a), &gk) in o.iter_mut().zip(pr.iter()).zip(g.iter()) {
            *o = a * (gk - mean) / n;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct JsdStep {
    pub t1: f64,
    pub t2: f64,
    pub loss: f64,
    /// `(CE(t1) + CE(t2)) / 2`
    pub cross_entropy: f64,
    pub divergence: f64,
    pub penalty: f64,
    pub gradient: CurveGradient,
}

/// Loss and control-point gradients of the two-point objective at `t1`.
pub fn jsd_step(
    net: &LoraNetwork,
    points: &ControlPointSet,
    inputs: &Features,
    labels: &[usize],
    t1: f64,
    config: &TrainConfig,
    noise: Option<NoiseSource<'_>>,
) -> Result<JsdStep> {
    let t2 = partner_t(t1, points.config().num_segments())?;
    let a = point_pass(net, points, inputs, labels, t1, noise)?;
    let b = point_pass(net, points, inputs, labels, t2, noise)?;
    let divergence = mean_js_divergence(&a.pass.probs, &b.pass.probs);
    let (penalty, slope) = jsd_penalty(divergence, config.tau_jsd, config.jsd_clip);
    let cross_entropy = 0.5 * (a.loss + b.loss);
    let loss = cross_entropy + config.lambda_jsd * penalty;

    let coupling = config.lambda_jsd * slope;
    let mut d_a = &a.d_logits * 0.5;
    let mut d_b = &b.d_logits * 0.5;
    if coupling != 0.0 {
        d_a.scaled_add(coupling, &divergence_logit_grad(&a.pass.probs, &b.pass.probs));
        d_b.scaled_add(coupling, &divergence_logit_grad(&b.pass.probs, &a.pass.probs));
    }
    let mut gradient = CurveGradient::zeros(points);
    gradient.accumulate(points, t1, &a.adapter_gradient(net, &d_a)?)?;
    gradient.accumulate(points, t2, &b.adapter_gradient(net, &d_b)?)?;
    Ok(JsdStep {
        t1,
        t2,
        loss,
        cross_entropy,
        divergence,
        penalty,
        gradient,
    })
}
