use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, MatRef};
use super::param::{he_limit, Param};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; output length is `len - kernel + 1`.
    Valid,
    /// Zero padding so output length equals input length. Odd totals put the extra zero on the right.
    Same,
}

/// Splits a `[batch, len]` or `[batch, len, channels]` tensor shape into its three extents.
pub(crate) fn seq_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, l] => Ok((b, l, 1)),
        [b, l, c] => Ok((b, l, c)),
        _ => Err(Error::shape("[batch, len] or [batch, len, channels]", format!("{shape:?}"))),
    }
}

/// Stride-1 cross-correlation over a channels-last sequence.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub(crate) in_channels: usize,
    pub(crate) filters: usize,
    pub(crate) kernel: usize,
    pub(crate) padding: Padding,
    /// `[kernel, in_channels, filters]`
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    in_len: usize,
    out_len: usize,
    in_shape: Vec<usize>,
}

impl Conv1d {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, padding: Padding, rng: &mut dyn RngCore) -> Self {
        let limit = he_limit(kernel * in_channels);
        Conv1d {
            in_channels,
            filters,
            kernel,
            padding,
            weight: Param::kernel(vec![kernel, in_channels, filters], limit, rng),
            bias: Param::zeros(vec![filters]),
            cache: None,
        }
    }

    fn pad_left(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.kernel - 1) / 2,
        }
    }

    pub fn output_len(&self, in_len: usize) -> Option<usize> {
        match self.padding {
            Padding::Same => Some(in_len),
            Padding::Valid => in_len.checked_sub(self.kernel).map(|d| d + 1),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, len, ch) = seq_dims(x.shape())?;
        if ch != self.in_channels {
            return Err(Error::shape(format!("{} channels", self.in_channels), ch));
        }
        let out_len = self
            .output_len(len)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::shape(format!("length >= {}", self.kernel), len))?;
        let width = self.kernel * ch;
        let pad = self.pad_left() as isize;
        let xd = x.data();
        let mut cols = vec![0.0; b * out_len * width];
        for bi in 0..b {
            for t in 0..out_len {
                let row = &mut cols[(bi * out_len + t) * width..][..width];
                for k in 0..self.kernel {
                    let src = t as isize + k as isize - pad;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let src = (bi * len + src as usize) * ch;
                    row[k * ch..(k + 1) * ch].copy_from_slice(&xd[src..src + ch]);
                }
            }
        }
        let mut out = Vec::with_capacity(b * out_len * self.filters);
        for _ in 0..b * out_len {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            1.0,
            MatRef::new(&cols, b * out_len, width),
            MatRef::new(&self.weight.value, width, self.filters),
            1.0,
            &mut out,
            self.filters,
        );
        self.cache = Some(ConvCache {
            cols,
            batch: b,
            in_len: len,
            out_len,
            in_shape: x.shape().to_vec(),
        });
        Tensor::new(vec![b, out_len, self.filters], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv1d backward called before forward".into()))?;
        let (b, out_len) = (cache.batch, cache.out_len);
        if grad.shape() != [b, out_len, self.filters] {
            return Err(Error::shape(
                format!("[{b}, {out_len}, {}]", self.filters),
                format!("{:?}", grad.shape()),
            ));
        }
        let ch = self.in_channels;
        let width = self.kernel * ch;
        let rows = b * out_len;
        gemm(
            1.0,
            MatRef::new(&cache.cols, rows, width).t(),
            MatRef::new(grad.data(), rows, self.filters),
            0.0,
            &mut self.weight.grad,
            self.filters,
        );
        self.bias.grad.fill(0.0);
        for row in grad.data().chunks_exact(self.filters) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dcols = vec![0.0; rows * width];
        gemm(
            1.0,
            MatRef::new(grad.data(), rows, self.filters),
            MatRef::new(&self.weight.value, width, self.filters).t(),
            0.0,
            &mut dcols,
            width,
        );
        let len = cache.in_len;
        let pad = self.pad_left() as isize;
        let mut dx = vec![0.0; b * len * ch];
        for bi in 0..b {
            for t in 0..out_len {
                let row = &dcols[(bi * out_len + t) * width..][..width];
                for k in 0..self.kernel {
                    let src = t as isize + k as isize - pad;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let dst = (bi * len + src as usize) * ch;
                    for (d, v) in dx[dst..dst + ch].iter_mut().zip(&row[k * ch..(k + 1) * ch]) {
                        *d += v;
                    }
                }
            }
        }
        Tensor::new(cache.in_shape.clone(), dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Windowed max along the sequence axis, applied per channel.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub(crate) width: usize,
    pub(crate) stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(width: usize, stride: usize) -> Self {
        MaxPool1d {
            width,
            stride,
            cache: None,
        }
    }

    pub fn output_len(&self, in_len: usize) -> Option<usize> {
        in_len.checked_sub(self.width).map(|d| d / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, len, ch) = seq_dims(x.shape())?;
        let out_len = self
            .output_len(len)
            .ok_or_else(|| Error::shape(format!("length >= {}", self.width), len))?;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * out_len * ch);
        let mut argmax = Vec::with_capacity(b * out_len * ch);
        for bi in 0..b {
            for t in 0..out_len {
                for c in 0..ch {
                    let mut best = (bi * len + t * self.stride) * ch + c;
                    for k in 1..self.width {
                        let idx = (bi * len + t * self.stride + k) * ch + c;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some((argmax, x.shape().to_vec()));
        let shape = if x.shape().len() == 2 {
            vec![b, out_len]
        } else {
            vec![b, out_len, ch]
        };
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (argmax, in_shape) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("maxpool backward called before forward".into()))?;
        if grad.len() != argmax.len() {
            return Err(Error::shape(argmax.len(), grad.len()));
        }
        let mut dx = vec![0.0; in_shape.iter().product()];
        for (&idx, g) in argmax.iter().zip(grad.data()) {
            dx[idx] += g;
        }
        Tensor::new(in_shape.clone(), dx)
    }
}
