use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::error::{Error, Result};

/// A first-order optimizer. `step` consumes the gradients: they are cleared
/// afterwards, and a parameter without one is an error.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParameterSet) -> Result<()>;
}

fn missing(name: &str) -> Error {
    Error::MissingGrad(format!("parameter `{name}` has no gradient"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(missing(name));
        }
        for (_, t) in params.iter_mut() {
            let g = t.take_grad().expect("checked above");
            for (w, gi) in t.data_mut().iter_mut().zip(&g) {
                *w = (*w - self.lr * gi) as f32 as f64;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(missing(name));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Invalid(
                "adam state was built for a different parameter set".into(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, t)) in params.iter_mut().enumerate() {
            let g = t.take_grad().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let step = self.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *w = (*w - step) as f32 as f64;
            }
        }
        Ok(())
    }
}
