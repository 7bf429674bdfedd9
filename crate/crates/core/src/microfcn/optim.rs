use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − lr·m̂/(√v̂ + eps)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning rate.
///
/// After more than `patience` consecutive epochs without a new best
/// validation loss, `lr ← max(factor·lr, floor)` and the counter restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
    pub best: f64,
    pub wait: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, factor: f64, floor: f64) -> Result<Self> {
        if !(lr0 > 0.0 && floor > 0.0 && floor <= lr0) {
            return Err(config(format!("need 0 < floor ≤ lr0, got lr0 {lr0}, floor {floor}")));
        }
        if !(factor > 0.0 && factor < 1.0) {
            return Err(config(format!("decay factor must lie in (0, 1), got {factor}")));
        }
        Ok(Self { lr: lr0, patience, factor, floor, best: f64::INFINITY, wait: 0 })
    }

    /// Record one epoch's validation loss and return the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait > self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.wait = 0;
            }
        }
        self.lr
    }
}
