use rand::RngCore;

use super::gemm::{gemm, MatRef};
use super::param::{glorot_limit, he_limit, Param};
use super::{Init, Tensor};
use crate::error::{Error, Result};

/// Affine map `x W + b` over `[batch, inputs]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub(crate) inputs: usize,
    pub(crate) units: usize,
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, init: Init, rng: &mut dyn RngCore) -> Self {
        let limit = match init {
            Init::HeUniform => he_limit(inputs),
            Init::GlorotUniform => glorot_limit(inputs, units),
        };
        Dense {
            inputs,
            units,
            weight: Param::kernel(vec![inputs, units], limit, rng),
            bias: Param::zeros(vec![units]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.inputs {
            return Err(Error::shape(format!("[batch, {}]", self.inputs), format!("{:?}", x.shape())));
        }
        let b = x.batch();
        let mut out = Vec::with_capacity(b * self.units);
        for _ in 0..b {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            1.0,
            MatRef::new(x.data(), b, self.inputs),
            MatRef::new(&self.weight.value, self.inputs, self.units),
            1.0,
            &mut out,
            self.units,
        );
        self.input = Some(x.clone());
        Tensor::new(vec![b, self.units], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        let b = x.batch();
        if grad.shape() != [b, self.units] {
            return Err(Error::shape(format!("[{b}, {}]", self.units), format!("{:?}", grad.shape())));
        }
        gemm(
            1.0,
            MatRef::new(x.data(), b, self.inputs).t(),
            MatRef::new(grad.data(), b, self.units),
            0.0,
            &mut self.weight.grad,
            self.units,
        );
        self.bias.grad.fill(0.0);
        for row in grad.data().chunks_exact(self.units) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; b * self.inputs];
        gemm(
            1.0,
            MatRef::new(grad.data(), b, self.units),
            MatRef::new(&self.weight.value, self.inputs, self.units).t(),
            0.0,
            &mut dx,
            self.inputs,
        );
        Tensor::new(vec![b, self.inputs], dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}
