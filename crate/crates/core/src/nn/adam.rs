use serde::{Deserialize, Serialize};

use super::{check_len, NnError};

pub const ACTOR_LR: f64 = 3e-4;
pub const CRITIC_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub max_grad_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn with_grad_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. Entries where `mask` is false get no update and are forced to zero.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) -> Result<(), NnError> {
        check_len("gradient", self.m.len(), grad.len())?;
        check_len("parameters", self.m.len(), params.len())?;
        if let Some(m) = mask {
            check_len("mask", self.m.len(), m.len())?;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient".into()));
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                params[i] = 0.0;
                continue;
            }
            let g = grad[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
