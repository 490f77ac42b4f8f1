use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are created lazily on the
/// first step and bound to the parameter order used then.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step_count: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative finite number, got {}",
                config.learning_rate
            )));
        }
        Ok(Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update to every parameter, then clears their gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::usage(format!(
                "parameter {i} (shape {:?}) has no gradient",
                params[i].shape()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::usage("optimizer parameter set changed between steps"));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let bc1 = one - T::of(c.beta1.powi(t));
        let bc2 = one - T::of(c.beta2.powi(t));

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.take_grad().expect("checked above");
            for (((x, m), v), g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
