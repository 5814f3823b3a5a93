use serde::{Deserialize, Serialize};

use super::{shape_err, NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `param` in place.
    pub fn step(&mut self, cfg: &AdamConfig, param: &mut [T], grad: &[T]) -> Result<(), NnError> {
        if param.len() != self.m.len() || grad.len() != self.m.len() {
            return shape_err(format!("adam state of {} for {} params", self.m.len(), param.len()));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - T::lit(cfg.beta1.powi(self.t as i32));
        let c2 = T::one() - T::lit(cfg.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}
