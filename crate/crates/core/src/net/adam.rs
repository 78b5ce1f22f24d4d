use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::FcnParams;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &FcnParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut FcnParams<T>, grads: &FcnParams<T>) -> Result<()> {
        let shapes_agree = params.tensors().count() == self.m.len()
            && params.tensors().zip(grads.tensors()).zip(&self.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
        if !shapes_agree {
            return Err(Error::InvalidArgument("gradient/optimizer shapes do not match the parameters".into()));
        }
        if grads.tensors().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient passed to Adam".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1: T = lit(c.beta1);
        let b2: T = lit(c.beta2);
        let one = T::one();
        let correct1: T = lit(1.0 / (1.0 - c.beta1.powi(t)));
        let correct2: T = lit(1.0 / (1.0 - c.beta2.powi(t)));
        let lr: T = lit(c.learning_rate);
        let eps: T = lit(c.epsilon);
        for (((p, g), m), v) in params.tensors_mut().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] * correct1;
                let vhat = v[i] * correct2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
