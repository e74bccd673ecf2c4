use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-cycle learning-rate policy: cosine ramp from `peak / div_factor` up to
/// `peak` over the first `pct_start` of training, then cosine decay down to
/// `peak / (div_factor * final_div_factor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            peak: 1e-4,
            pct_start: 0.12,
            div_factor: 300.0,
            final_div_factor: 1e4,
        }
    }
}

impl OneCycle {
    /// Same shape with a peak suited to small networks trained from a random
    /// base in a few hundred steps.
    pub fn desk() -> Self {
        Self {
            peak: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0) || !self.peak.is_finite() {
            return Err(Error::config("peak learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pct_start) {
            return Err(Error::config("pct_start must lie in [0, 1]"));
        }
        if !(self.div_factor > 0.0) || !(self.final_div_factor > 0.0) {
            return Err(Error::config("division factors must be positive"));
        }
        Ok(())
    }

    pub fn initial(&self) -> f64 {
        self.peak / self.div_factor
    }

    pub fn last(&self) -> f64 {
        self.initial() / self.final_div_factor
    }

    /// Learning rate at `step` of a `total_steps` run.
    pub fn lr(&self, step: usize, total_steps: usize) -> Result<f64> {
        if step > total_steps {
            return Err(Error::domain(format!("step {step} beyond schedule length {total_steps}")));
        }
        let warm = self.pct_start * total_steps as f64;
        let s = step as f64;
        if s <= warm && warm > 0.0 {
            Ok(cosine(self.initial(), self.peak, s / warm))
        } else {
            let rest = total_steps as f64 - warm;
            let frac = if rest > 0.0 { (s - warm) / rest } else { 1.0 };
            Ok(cosine(self.peak, self.last(), frac))
        }
    }
}

fn cosine(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) * 0.5 * (1.0 + (PI * frac).cos())
}

/// Free-function form of [`OneCycle::lr`].
pub fn one_cycle_lr(step: usize, total_steps: usize, schedule: &OneCycle) -> Result<f64> {
    schedule.lr(step, total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn endpoints() {
        let s = OneCycle::default();
        assert_eq!(s.lr(1200, 10_000).unwrap(), 1e-4);
        assert_abs_diff_eq!(s.lr(0, 10_000).unwrap(), 1e-4 / 300.0, epsilon = 1e-20);
        assert_abs_diff_eq!(s.lr(10_000, 10_000).unwrap(), 1e-4 / 300.0 / 1e4, epsilon = 1e-24);
        assert!(s.lr(10_001, 10_000).is_err());
    }

    #[test]
    fn monotone_up_then_down_and_continuous() {
        let s = OneCycle::default();
        let lrs: Vec<f64> = (0..=10_000).map(|k| s.lr(k, 10_000).unwrap()).collect();
        assert!(lrs[..=1200].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[1200..].windows(2).all(|w| w[0] >= w[1]));
        // both branches meet at the peak
        let warm = 0.12 * 10_000.0;
        assert_abs_diff_eq!(cosine(s.initial(), s.peak, warm / warm), cosine(s.peak, s.last(), 0.0), epsilon = 1e-12);
    }

    #[test]
    fn no_warmup() {
        let s = OneCycle {
            pct_start: 0.0,
            ..OneCycle::default()
        };
        assert_eq!(s.lr(0, 10).unwrap(), s.peak);
    }
}
