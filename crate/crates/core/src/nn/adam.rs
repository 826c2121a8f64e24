//! Adam with bias correction. Moment buffers are keyed by parameter name so
//! the optimizer survives parameter re-borrowing between steps.

use super::tensor::{Parameter, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over every parameter; gradients are cleared
    /// afterwards.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            debug_assert_eq!(m.shape(), p.value.shape(), "moment shape drifted");
            let g = p.grad.data();
            let mdata = m.data_mut();
            let vdata = v.data_mut();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let gi = g[i];
                mdata[i] = self.beta1 * mdata[i] + (1.0 - self.beta1) * gi;
                vdata[i] = self.beta2 * vdata[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = mdata[i] / bc1;
                let v_hat = vdata[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
    }
}
