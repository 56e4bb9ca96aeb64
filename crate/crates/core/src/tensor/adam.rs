//! Adam optimizer with bias correction.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.98, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    /// (m, v) per parameter, in the same order as the parameter list.
    pub moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> AdamState {
        AdamState {
            cfg,
            t: 0,
            moments: params.iter().map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()])).collect(),
        }
    }

    /// One bias-corrected update, in place. Parameters with no accumulated
    /// gradient are treated as having zero gradient (their moments decay).
    /// Gradients are consumed: every parameter's `grad` is cleared.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Param(format!(
                "adam: {} parameters but state tracks {}",
                params.len(),
                self.moments.len()
            )));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.t as i32);
        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            if p.numel() != m.len() {
                return Err(Error::Shape(format!(
                    "adam: parameter of {} elements but moment buffers of {}",
                    p.numel(),
                    m.len()
                )));
            }
            let grad = p.grad();
            let mut data = p.data_mut();
            match grad {
                Some(g) => {
                    for i in 0..data.len() {
                        let gi = g[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let mhat = m[i] as f64 / bc1;
                        let vhat = v[i] as f64 / bc2;
                        data[i] -= (c.lr as f64 * mhat / (vhat.sqrt() + c.epsilon as f64)) as f32;
                    }
                }
                None => {
                    for i in 0..data.len() {
                        m[i] *= c.beta1;
                        v[i] *= c.beta2;
                        let mhat = m[i] as f64 / bc1;
                        let vhat = v[i] as f64 / bc2;
                        data[i] -= (c.lr as f64 * mhat / (vhat.sqrt() + c.epsilon as f64)) as f32;
                    }
                }
            }
            drop(data);
            p.zero_grad();
        }
        Ok(())
    }
}
