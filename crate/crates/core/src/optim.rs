//! Adam with decoupled weight decay, and the step-decay learning-rate
//! schedule used for every network.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),
    #[error("schedule needs at least {min} epochs, got {total}")]
    TotalTooSmall { total: usize, min: usize },
    #[error("parameter/gradient count mismatch: {params} vs {grads}")]
    CountMismatch { params: usize, grads: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay. Kept at zero here: the L2 penalty lives in the loss
    /// so that parameter groups can be excluded or weighted separately.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim())))
            .unzip();
        OptimizerState { config, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update with learning rate `lr`. Gradients are checked
    /// before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], lr: f64) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(OptimError::CountMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(OptimError::NonFiniteGradient(i));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
                });
        }
        Ok(())
    }
}

/// Number of trailing epochs over which the learning rate is halved.
pub const DECAY_WINDOW: usize = 500;
const DECAY_EVERY: usize = 100;

/// Constant `base` rate, then halved at the start of the last 500 epochs and
/// again every 100 epochs, so the final 100 epochs run at `base / 32`.
pub fn lr_schedule(epoch: usize, total_epochs: usize, base: f64) -> Result<f64, OptimError> {
    if total_epochs < DECAY_WINDOW {
        return Err(OptimError::TotalTooSmall {
            total: total_epochs,
            min: DECAY_WINDOW,
        });
    }
    let start = total_epochs - DECAY_WINDOW;
    if epoch < start {
        return Ok(base);
    }
    let halvings = 1 + (epoch - start) / DECAY_EVERY;
    Ok(base * 0.5f64.powi(halvings as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = array![[1.0, -2.0]];
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        st.step(&mut [&mut p], &[Array2::zeros((1, 2))], 1e-3).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        let mut p = array![[0.5]];
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        st.step(&mut [&mut p], &[array![[1.0]]], 0.1).unwrap();
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_decreases() {
        let mut p = array![[2.0]];
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        let f = |x: f64| x * x;
        let f0 = f(p[[0, 0]]);
        for _ in 0..2 {
            let g = &p * 2.0;
            st.step(&mut [&mut p], &[g], 0.1).unwrap();
        }
        assert!(f(p[[0, 0]]) < f0);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut p = array![[1.0]];
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        let r = st.step(&mut [&mut p], &[array![[f64::NAN]]], 0.1);
        assert_eq!(r, Err(OptimError::NonFiniteGradient(0)));
        assert_eq!(p, array![[1.0]]);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 3000, 1e-3).unwrap(), 1e-3);
        assert_eq!(lr_schedule(2499, 3000, 1e-3).unwrap(), 1e-3);
        assert_eq!(lr_schedule(2500, 3000, 1e-3).unwrap(), 5e-4);
        assert_eq!(lr_schedule(2999, 3000, 1e-3).unwrap(), 3.125e-5);
        assert_eq!(lr_schedule(2900, 3000, 1e-3).unwrap(), 1e-3 / 32.0);
        assert!(matches!(lr_schedule(0, 499, 1e-3), Err(OptimError::TotalTooSmall { .. })));
    }

    #[test]
    fn schedule_is_non_increasing() {
        for total in [500, 777, 3000, 4000] {
            let mut prev = f64::INFINITY;
            for e in 0..total {
                let lr = lr_schedule(e, total, 1e-3).unwrap();
                assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
