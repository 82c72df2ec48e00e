use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec, Mode};
use super::param::Param;
use super::Tensor;
use crate::error::{Error, Result};

/// Weight constraint and activity penalty applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    /// Per-unit L2 cap on kernel weights, enforced after every optimizer step.
    pub max_norm: Option<f64>,
    /// Coefficient of the L2 penalty on regularized layer outputs, averaged over the batch.
    pub activity_l2: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            max_norm: Some(3.0),
            activity_l2: 1e-6,
        }
    }
}

impl Regularization {
    pub fn none() -> Self {
        Regularization {
            max_norm: None,
            activity_l2: 0.0,
        }
    }
}

/// Trained values of a network, detached from any forward cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub layers: Vec<LayerSpec>,
    /// Indices of layers whose outputs carry the activity penalty.
    pub regularized: Vec<usize>,
    pub regularization: Regularization,
    /// Parameter arrays in layer order.
    pub params: Vec<Vec<f64>>,
    /// Non-trainable arrays (batchnorm running statistics) in layer order.
    pub buffers: Vec<Vec<f64>>,
}

/// A sequential stack of layers.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    regularized: Vec<usize>,
    regularization: Regularization,
    activations: Vec<(usize, Tensor)>,
    penalty: f64,
}

impl Network {
    pub fn new(
        specs: Vec<LayerSpec>,
        regularized: Vec<usize>,
        regularization: Regularization,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if let Some(&bad) = regularized.iter().find(|&&i| i >= specs.len()) {
            return Err(Error::Config(format!("regularized layer index {bad} out of range")));
        }
        let layers = specs.iter().map(|s| Layer::build(s, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Network {
            specs,
            layers,
            regularized,
            regularization,
            activations: Vec::new(),
            penalty: 0.0,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn regularization(&self) -> Regularization {
        self.regularization
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        self.activations.clear();
        self.penalty = 0.0;
        let coef = self.regularization.activity_l2;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode, rng)?;
            if mode == Mode::Train && coef > 0.0 && self.regularized.contains(&i) {
                let b = h.batch().max(1) as f64;
                self.penalty += coef * h.data().iter().map(|v| v * v).sum::<f64>() / b;
                self.activations.push((i, h.clone()));
            }
        }
        Ok(h)
    }

    /// Activity penalty of the most recent training-mode forward pass.
    pub fn activity_penalty(&self) -> f64 {
        self.penalty
    }

    /// Back-propagates `upstream` (gradient of the loss w.r.t. the network output),
    /// adding the activity-penalty gradient, and returns the input gradient.
    /// Parameter gradients are left in each [`Param::grad`].
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let coef = self.regularization.activity_l2;
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            if let Some((_, act)) = self.activations.iter().find(|(k, _)| *k == i) {
                if act.shape() != g.shape() {
                    return Err(Error::shape(format!("{:?}", act.shape()), format!("{:?}", g.shape())));
                }
                let scale = 2.0 * coef / act.batch().max(1) as f64;
                for (gv, a) in g.data_mut().iter_mut().zip(act.data()) {
                    *gv += scale * a;
                }
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn apply_constraints(&mut self) {
        if let Some(cap) = self.regularization.max_norm {
            for p in self.params_mut() {
                p.apply_max_norm(cap);
            }
        }
    }

    pub fn state(&self) -> NetworkState {
        NetworkState {
            layers: self.specs.clone(),
            regularized: self.regularized.clone(),
            regularization: self.regularization,
            params: self.params().iter().map(|p| p.value.clone()).collect(),
            buffers: self
                .layers
                .iter()
                .flat_map(Layer::buffers)
                .map(<[f64]>::to_vec)
                .collect(),
        }
    }

    pub fn from_state(state: &NetworkState) -> Result<Self> {
        // Initial draws are overwritten below, so any generator will do.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(
            state.layers.clone(),
            state.regularized.clone(),
            state.regularization,
            &mut rng,
        )?;
        {
            let mut params = net.params_mut();
            if params.len() != state.params.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} parameter arrays, found {}",
                    params.len(),
                    state.params.len()
                )));
            }
            for (p, v) in params.iter_mut().zip(&state.params) {
                if p.value.len() != v.len() {
                    return Err(Error::Checkpoint(format!(
                        "parameter of shape {:?} given {} values",
                        p.shape,
                        v.len()
                    )));
                }
                p.value.copy_from_slice(v);
            }
        }
        let mut buffers: Vec<&mut Vec<f64>> = net.layers.iter_mut().flat_map(Layer::buffers_mut).collect();
        if buffers.len() != state.buffers.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} buffers, found {}",
                buffers.len(),
                state.buffers.len()
            )));
        }
        for (b, v) in buffers.iter_mut().zip(&state.buffers) {
            if b.len() != v.len() {
                return Err(Error::Checkpoint("buffer length mismatch".into()));
            }
            b.copy_from_slice(v);
        }
        Ok(net)
    }
}
