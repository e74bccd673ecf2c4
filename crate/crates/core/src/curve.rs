//! Segmented Bézier curves over flat parameter vectors.
//!
//! A curve with `N` anchors and `m` handles per segment has `N - 1` segments of
//! degree `m + 1`. Control points are stored in one flat list in which anchor
//! `a` sits at index `a * (m + 1)`, so neighbouring segments share exactly one
//! control point. The global parameter runs over `[0, N - 1]`; segment `k`
//! covers `[k, k + 1]`.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest segment degree for which the multiplicative binomial recurrence
/// stays exact in `f64`.
pub const MAX_DEGREE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub num_anchors: usize,
    pub handles_per_segment: usize,
}

impl CurveConfig {
    pub fn new(num_anchors: usize, handles_per_segment: usize) -> Result<Self> {
        let config = Self {
            num_anchors,
            handles_per_segment,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_anchors == 0 {
            return Err(Error::domain("a curve needs at least one anchor"));
        }
        if self.degree() > MAX_DEGREE {
            return Err(Error::domain(format!(
                "segment degree {} exceeds the supported maximum {MAX_DEGREE}",
                self.degree()
            )));
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.num_anchors.saturating_sub(1)
    }

    pub fn num_control_points(&self) -> usize {
        if self.num_anchors <= 1 {
            1
        } else {
            self.num_segments() * (self.handles_per_segment + 1) + 1
        }
    }

    /// Polynomial degree of one segment.
    pub fn degree(&self) -> usize {
        self.handles_per_segment + 1
    }

    /// Upper end of the parameter domain `[0, N_seg]`.
    pub fn t_max(&self) -> f64 {
        self.num_segments() as f64
    }

    pub fn anchor_indices(&self) -> Vec<usize> {
        (0..self.num_anchors)
            .map(|a| a * (self.handles_per_segment + 1))
            .collect()
    }

    pub fn is_anchor(&self, index: usize) -> bool {
        index.is_multiple_of(self.handles_per_segment + 1) && index < self.num_control_points()
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max()).contains(&t) {
            return Err(Error::domain(format!(
                "curve parameter {t} outside [0, {}]",
                self.t_max()
            )));
        }
        Ok(())
    }
}

/// Which control points are trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveMode {
    /// Every control point is optimized.
    Free,
    /// Anchors are frozen to given vectors; only handles move.
    Anchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    config: CurveConfig,
    points: Vec<Array1<f64>>,
    frozen: Vec<bool>,
}

impl ControlPointSet {
    pub fn new(config: CurveConfig, points: Vec<Array1<f64>>, mode: CurveMode) -> Result<Self> {
        config.validate()?;
        check_dim("control point count", config.num_control_points(), points.len())?;
        let dim = points[0].len();
        for p in &points {
            check_dim("control point dimension", dim, p.len())?;
        }
        let frozen = (0..points.len())
            .map(|i| mode == CurveMode::Anchored && config.is_anchor(i))
            .collect();
        Ok(Self {
            config,
            points,
            frozen,
        })
    }

    /// Rebuild from stored parts, checking that the frozen pattern is one of
    /// the two legal ones.
    pub fn from_parts(config: CurveConfig, points: Vec<Array1<f64>>, frozen: Vec<bool>) -> Result<Self> {
        let mode = if frozen.iter().any(|&f| f) {
            CurveMode::Anchored
        } else {
            CurveMode::Free
        };
        let set = Self::new(config, points, mode)?;
        if set.frozen != frozen {
            return Err(Error::Format(
                "frozen flags must be all false or exactly the anchor indices".into(),
            ));
        }
        Ok(set)
    }

    pub fn config(&self) -> &CurveConfig {
        &self.config
    }

    pub fn points(&self) -> &[Array1<f64>] {
        &self.points
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn mode(&self) -> CurveMode {
        if self.frozen.iter().any(|&f| f) {
            CurveMode::Anchored
        } else {
            CurveMode::Free
        }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.frozen.iter().any(|&f| !f)
    }

    /// Mutable access to the unfrozen points; frozen slots are `None`.
    pub(crate) fn trainable_mut(&mut self) -> Vec<Option<&mut Array1<f64>>> {
        self.points
            .iter_mut()
            .zip(&self.frozen)
            .map(|(p, &f)| (!f).then_some(p))
            .collect()
    }

    pub fn eval(&self, t: f64) -> Result<Array1<f64>> {
        eval_curve(self, t)
    }

    pub fn derivative(&self, t: f64, side: Side) -> Result<Array1<f64>> {
        eval_curve_derivative(self, t, side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLocation {
    pub segment: usize,
    pub tau: f64,
}

/// Side from which a derivative is taken at a segment join.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// `C(degree, i) (1 - t)^(degree - i) t^i`.
pub fn bernstein_basis(i: usize, degree: usize, t: f64) -> Result<f64> {
    if i > degree {
        return Err(Error::domain(format!("basis index {i} exceeds degree {degree}")));
    }
    if degree > MAX_DEGREE {
        return Err(Error::domain(format!("degree {degree} exceeds {MAX_DEGREE}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("basis parameter {t} outside [0, 1]")));
    }
    Ok(binomial(degree, i) * (1.0 - t).powi((degree - i) as i32) * t.powi(i as i32))
}

/// All `degree + 1` basis values at `t`.
pub fn bernstein_vector(degree: usize, t: f64) -> Result<Vec<f64>> {
    (0..=degree).map(|i| bernstein_basis(i, degree, t)).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 1..=k {
        c = c * (n - k + j) as f64 / j as f64;
    }
    c
}

pub fn locate_segment(t: f64, config: &CurveConfig) -> Result<SegmentLocation> {
    if config.num_anchors < 2 {
        return Err(Error::DegenerateCurve(
            "a single-anchor curve has no segments; use its only control point".into(),
        ));
    }
    config.check_t(t)?;
    let segment = (t.floor() as usize).min(config.num_anchors - 2);
    Ok(SegmentLocation {
        segment,
        tau: t - segment as f64,
    })
}

/// Sparse map from control-point index to its weight in the curve at `t`.
/// The weights form a partition of unity over the active segment.
pub fn control_point_weights(t: f64, config: &CurveConfig) -> Result<Vec<(usize, f64)>> {
    if config.num_anchors == 1 {
        if t != 0.0 {
            return Err(Error::domain(format!(
                "single-point curve is only defined at t = 0, got {t}"
            )));
        }
        return Ok(vec![(0, 1.0)]);
    }
    let loc = locate_segment(t, config)?;
    let start = loc.segment * config.degree();
    Ok(bernstein_vector(config.degree(), loc.tau)?
        .into_iter()
        .enumerate()
        .map(|(i, w)| (start + i, w))
        .collect())
}

pub fn eval_curve(points: &ControlPointSet, t: f64) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(points.dim());
    for (index, w) in control_point_weights(t, points.config())? {
        out.scaled_add(w, &points.points[index]);
    }
    Ok(out)
}

/// Derivative with respect to the global parameter. At a join between two
/// segments `side` selects the one-sided derivative; at the two ends of the
/// domain the only available side is used.
pub fn eval_curve_derivative(points: &ControlPointSet, t: f64, side: Side) -> Result<Array1<f64>> {
    let config = points.config();
    if config.num_anchors == 1 {
        return Ok(Array1::zeros(points.dim()));
    }
    let mut loc = locate_segment(t, config)?;
    if side == Side::Left && loc.tau == 0.0 && loc.segment > 0 {
        loc = SegmentLocation {
            segment: loc.segment - 1,
            tau: 1.0,
        };
    }
    let degree = config.degree();
    let start = loc.segment * degree;
    let basis = bernstein_vector(degree - 1, loc.tau)?;
    let mut out = Array1::zeros(points.dim());
    for (i, b) in basis.into_iter().enumerate() {
        let w = degree as f64 * b;
        out.scaled_add(w, &points.points[start + i + 1]);
        out.scaled_add(-w, &points.points[start + i]);
    }
    Ok(out)
}

/// Equispaced evaluation grid over `[0, N_seg]`, including both ends.
/// Defaults to `2 N_cp - 1` points: one on every control point's peak and one
/// midway between neighbours.
pub fn make_eval_grid(config: &CurveConfig, num_points: Option<usize>) -> Result<Vec<f64>> {
    let m = num_points.unwrap_or(2 * config.num_control_points() - 1);
    if m < 1 {
        return Err(Error::domain("grid needs at least one point"));
    }
    let segs = config.num_segments();
    if segs == 0 || m == 1 {
        return Ok(vec![0.0]);
    }
    Ok((0..m)
        .map(|j| (segs * j) as f64 / (m - 1) as f64)
        .collect())
}
