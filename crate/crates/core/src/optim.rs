//! Adam with an exponential learning-rate schedule.

use std::collections::BTreeMap;

use crate::autodiff::{ParamGrads, Parameters};
use crate::error::{Result, WeaverError};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut Parameters<f64>, grads: &ParamGrads<f64>) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in &grads.grads {
            let p = params.get_mut(name).ok_or_else(|| {
                WeaverError::InvalidArgument(format!("gradient for unknown parameter `{name}`"))
            })?;
            if p.shape() != g.shape() {
                return Err(WeaverError::shape("adam", p.shape(), g.shape()));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `lr(epoch) = base · γ^epoch`, epochs counted from 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialLr {
    pub base: f64,
    pub gamma: f64,
}

impl ExponentialLr {
    pub fn at(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi(epoch as i32)
    }
}
