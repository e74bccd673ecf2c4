use ndarray::{Array1, Zip};

use crate::error::{check_dim, Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Array1<f64>,
    pub second: Array1<f64>,
}

/// Decoupled-weight-decay Adam over a list of parameter vectors. Entries that
/// are `None` (frozen control points) carry no state and are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub lr: f64,
    moments: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(dims: &[Option<usize>]) -> Self {
        Self {
            step: 0,
            lr: 0.0,
            moments: dims
                .iter()
                .map(|d| {
                    d.map(|d| Moments {
                        first: Array1::zeros(d),
                        second: Array1::zeros(d),
                    })
                })
                .collect(),
        }
    }

    pub fn moments(&self, index: usize) -> Option<&Moments> {
        self.moments[index].as_ref()
    }

    /// One update. `params[i]` and `grads[i]` must be present exactly where
    /// the optimizer holds state.
    pub fn step(
        &mut self,
        params: &mut [Option<&mut Array1<f64>>],
        grads: &[Option<Array1<f64>>],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        check_dim("optimizer parameter count", self.moments.len(), params.len())?;
        check_dim("optimizer gradient count", self.moments.len(), grads.len())?;
        for g in grads.iter().flatten() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    step: self.step as usize,
                    loss: f64::NAN,
                });
            }
        }
        self.step += 1;
        self.lr = lr;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for ((state, p), g) in self.moments.iter_mut().zip(params.iter_mut()).zip(grads) {
            let (Some(state), Some(p), Some(g)) = (state.as_mut(), p.as_mut(), g.as_ref()) else {
                continue;
            };
            check_dim("optimizer vector", state.first.len(), g.len())?;
            check_dim("optimizer vector", state.first.len(), p.len())?;
            Zip::from(&mut **p)
                .and(&mut state.first)
                .and(&mut state.second)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + weight_decay * *p);
                });
        }
        Ok(())
    }
}

/// Single-vector convenience wrapper.
pub fn adamw_step(
    state: &mut AdamW,
    params: &mut Array1<f64>,
    grads: &Array1<f64>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step(&mut [Some(params)], &[Some(grads.clone())], lr, weight_decay)
}
