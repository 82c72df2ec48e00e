use super::param::Param;
use super::{Mode, Tensor};
use crate::error::{Error, Result};

pub const BATCHNORM_MOMENTUM: f64 = 0.99;
pub const BATCHNORM_EPSILON: f64 = 1e-3;

/// Normalizes the last axis using batch statistics in training and running statistics in inference.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub(crate) features: usize,
    pub(crate) gamma: Param,
    pub(crate) beta: Param,
    pub(crate) running_mean: Vec<f64>,
    pub(crate) running_var: Vec<f64>,
    pub(crate) momentum: f64,
    pub(crate) epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            features,
            gamma: Param::filled(vec![features], 1.0),
            beta: Param::zeros(vec![features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BATCHNORM_MOMENTUM,
            epsilon: BATCHNORM_EPSILON,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let f = self.features;
        if x.shape().last() != Some(&f) || x.shape().len() < 2 {
            return Err(Error::shape(format!("[.., {f}]"), format!("{:?}", x.shape())));
        }
        let n = x.len() / f;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; f];
                for row in x.data().chunks_exact(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for row in x.data().chunks_exact(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                for j in 0..f {
                    self.running_mean[j] = self.momentum * self.running_mean[j] + (1.0 - self.momentum) * mean[j];
                    self.running_var[j] = self.momentum * self.running_var[j] + (1.0 - self.momentum) * var[j];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(f) {
            for j in 0..f {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(self.gamma.value[j] * h + self.beta.value[j]);
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            mode,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("batchnorm backward called before forward".into()))?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(Error::shape(format!("{:?}", cache.shape), format!("{:?}", grad.shape())));
        }
        let f = self.features;
        let n = grad.len() / f;
        self.gamma.grad.fill(0.0);
        self.beta.grad.fill(0.0);
        for (g_row, h_row) in grad.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
            for j in 0..f {
                self.gamma.grad[j] += g_row[j] * h_row[j];
                self.beta.grad[j] += g_row[j];
            }
        }
        let mut dx = Vec::with_capacity(grad.len());
        match cache.mode {
            Mode::Infer => {
                for g_row in grad.data().chunks_exact(f) {
                    for j in 0..f {
                        dx.push(g_row[j] * self.gamma.value[j] * cache.inv_std[j]);
                    }
                }
            }
            Mode::Train => {
                // sum over rows of dxhat and dxhat * xhat, per feature
                let sum_dxhat: Vec<f64> = (0..f).map(|j| self.beta.grad[j] * self.gamma.value[j]).collect();
                let sum_dxhat_xhat: Vec<f64> = (0..f).map(|j| self.gamma.grad[j] * self.gamma.value[j]).collect();
                let nf = n as f64;
                for (g_row, h_row) in grad.data().chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
                    for j in 0..f {
                        let dxhat = g_row[j] * self.gamma.value[j];
                        dx.push(cache.inv_std[j] / nf * (nf * dxhat - sum_dxhat[j] - h_row[j] * sum_dxhat_xhat[j]));
                    }
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}
