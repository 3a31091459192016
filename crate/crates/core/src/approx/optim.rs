use serde::{Deserialize, Serialize};

use super::network::{GradientRecord, ParamVector};
use crate::error::{check_dim, Result};

/// Adam with bias correction. A step whose gradient holds a NaN or infinity is rejected
/// without touching the parameters or the moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    rejected: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            rejected: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn rejected_steps(&self) -> u64 {
        self.rejected
    }

    /// Apply one update. Returns `Ok(false)` when the step was rejected.
    pub fn step(&mut self, params: &mut ParamVector, grad: &GradientRecord) -> Result<bool> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grad.values.len())?;
        if !grad.all_finite() {
            self.rejected += 1;
            return Ok(false);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .values
            .iter_mut()
            .zip(&grad.values)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(true)
    }
}
