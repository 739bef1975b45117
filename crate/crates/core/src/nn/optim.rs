use serde::{Deserialize, Serialize};

use super::{cast, Network, Scalar};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new() }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update using the gradients left by the last backward pass.
    /// `t` is the one-based step count used for bias correction.
    pub fn step(&mut self, net: &mut Network<T>, lr: f64, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::domain("adam step count starts at 1"));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let step_size: T = cast(lr / (1.0 - b1.powi(t as i32)));
        let bc2: T = cast(1.0 / (1.0 - b2.powi(t as i32)));
        let (b1, b2): (T, T) = (cast(b1), cast(b2));
        let one = T::one();
        let eps: T = cast(self.eps);
        let fresh = self.m.is_empty();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.visit_params(&mut |param, grad| {
            if fresh {
                ms.push(vec![T::zero(); param.len()]);
                vs.push(vec![T::zero(); param.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for k in 0..param.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (one - b1) * g;
                v[k] = b2 * v[k] + (one - b2) * g * g;
                param[k] = param[k] - step_size * m[k] / ((v[k] * bc2).sqrt() + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// One-based epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 0.01,
            decay_epochs: vec![10, 15],
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("decay epochs must be strictly increasing"));
        }
        if self.decay_epochs.contains(&0) {
            return Err(Error::config("decay epochs are one-based"));
        }
        Ok(())
    }

    /// Learning rate during one-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}
