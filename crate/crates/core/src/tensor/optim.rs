use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 2e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step counter for one parameter set.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub hyper: AdamW,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(hyper: AdamW, params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            hyper,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update with bias correction.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(Error::Shape {
                op: "adamw",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamW {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= 1.0 - lr * weight_decay;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Running sum of per-sample gradients.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    sum: Vec<Tensor>,
    count: usize,
}

impl GradAccumulator {
    pub fn new(params: &ParamStore) -> Self {
        GradAccumulator {
            sum: params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            count: 0,
        }
    }

    pub fn add(&mut self, grads: &[Tensor]) {
        for (s, g) in self.sum.iter_mut().zip(grads) {
            for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the accumulated gradients; resets the accumulator.
    pub fn take_mean(&mut self) -> Vec<Tensor> {
        let n = self.count.max(1) as f64;
        self.count = 0;
        self.sum
            .iter_mut()
            .map(|s| {
                let mean = Tensor::new(s.shape().to_vec(), s.data().iter().map(|v| v / n).collect())
                    .expect("same shape");
                s.data_mut().iter_mut().for_each(|v| *v = 0.0);
                mean
            })
            .collect()
    }
}
