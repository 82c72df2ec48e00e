use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::batchnorm::BatchNorm;
use super::conv::{Conv1d, MaxPool1d, Padding};
use super::dense::Dense;
use super::lstm::Lstm;
use super::param::Param;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    HeUniform,
    GlorotUniform,
}

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        units: usize,
        init: Init,
    },
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        padding: Padding,
    },
    Maxpool1d {
        width: usize,
        stride: usize,
    },
    Batchnorm {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    Lstm {
        inputs: usize,
        units: usize,
        return_sequences: bool,
    },
    Flatten,
    Relu,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Dense { inputs, units, .. } => {
                positive("dense inputs", inputs)?;
                positive("dense units", units)
            }
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
                ..
            } => {
                positive("conv1d channels", in_channels)?;
                positive("conv1d filters", filters)?;
                positive("conv1d kernel", kernel)
            }
            LayerSpec::Maxpool1d { width, stride } => {
                positive("pool width", width)?;
                positive("pool stride", stride)
            }
            LayerSpec::Batchnorm { features } => positive("batchnorm features", features),
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
                }
            }
            LayerSpec::Lstm { inputs, units, .. } => {
                positive("lstm inputs", inputs)?;
                positive("lstm units", units)
            }
            LayerSpec::Flatten | LayerSpec::Relu => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub(crate) rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Dropout { rate, mask: None }
    }

    /// Training mode zeroes each element with probability `rate` and scales survivors by `1 / (1 - rate)`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = Some(None);
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(Some(mask));
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Err(Error::State("dropout backward called before forward".into())),
            Some(None) => Ok(grad.clone()),
            Some(Some(mask)) => {
                if mask.len() != grad.len() {
                    return Err(Error::shape(mask.len(), grad.len()));
                }
                let out = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad.shape().to_vec(), out)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = x.data().iter().map(|v| v.max(0.0)).collect();
        self.input = Some(x.clone());
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if x.shape() != grad.shape() {
            return Err(Error::shape(format!("{:?}", x.shape()), format!("{:?}", grad.shape())));
        }
        let out = grad
            .data()
            .iter()
            .zip(x.data())
            .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
            .collect();
        Tensor::new(grad.shape().to_vec(), out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let b = x.batch();
        let width = if b == 0 { 0 } else { x.len() / b };
        self.in_shape = Some(x.shape().to_vec());
        x.clone().reshape(vec![b, width])
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self
            .in_shape
            .clone()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        grad.clone().reshape(shape)
    }
}

/// A layer with its parameters and forward cache.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Lstm(Lstm),
    Flatten(Flatten),
    Relu(Relu),
}

impl Layer {
    pub fn build(spec: &LayerSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Dense { inputs, units, init } => Layer::Dense(Dense::new(inputs, units, init, rng)),
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
                padding,
            } => Layer::Conv1d(Conv1d::new(in_channels, filters, kernel, padding, rng)),
            LayerSpec::Maxpool1d { width, stride } => Layer::MaxPool1d(MaxPool1d::new(width, stride)),
            LayerSpec::Batchnorm { features } => Layer::BatchNorm(BatchNorm::new(features)),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)),
            LayerSpec::Lstm {
                inputs,
                units,
                return_sequences,
            } => Layer::Lstm(Lstm::new(inputs, units, return_sequences, rng)),
            LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            LayerSpec::Relu => Layer::Relu(Relu::default()),
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
            Layer::MaxPool1d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode, rng),
            Layer::Lstm(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Conv1d(l) => l.backward(grad),
            Layer::MaxPool1d(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::Lstm(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => l.params().to_vec(),
            Layer::Conv1d(l) => l.params().to_vec(),
            Layer::BatchNorm(l) => l.params().to_vec(),
            Layer::Lstm(l) => l.params().to_vec(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => l.params_mut().into_iter().collect(),
            Layer::Conv1d(l) => l.params_mut().into_iter().collect(),
            Layer::BatchNorm(l) => l.params_mut().into_iter().collect(),
            Layer::Lstm(l) => l.params_mut().into_iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Non-trainable state carried into inference (batchnorm running statistics).
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            _ => Vec::new(),
        }
    }
}
