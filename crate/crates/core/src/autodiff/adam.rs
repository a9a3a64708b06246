//! Adam optimizer with bias-corrected moment estimates.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_lens: &[usize]) -> Self {
        Adam {
            cfg,
            t: 0,
            m: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters; `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("adam: parameter count mismatch"));
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if param.len() != grad.len() || param.len() != m.len() {
                return Err(Error::invalid("adam: parameter length mismatch"));
            }
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / b1t;
                let v_hat = v[i] / b2t;
                *p -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
