use rand::RngCore;

use super::conv::seq_dims;
use super::gemm::{gemm, MatRef};
use super::param::{glorot_limit, Param};
use super::Tensor;
use crate::error::{Error, Result};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Long short-term memory layer over `[batch, time, inputs]`.
///
/// Gate blocks are laid out `[input, forget, candidate, output]` along the
/// last axis of both kernels. The forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub(crate) inputs: usize,
    pub(crate) units: usize,
    pub(crate) return_sequences: bool,
    /// `[inputs, 4 * units]`
    pub(crate) kernel: Param,
    /// `[units, 4 * units]`
    pub(crate) recurrent: Param,
    pub(crate) bias: Param,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    input: Tensor,
    batch: usize,
    steps: usize,
    /// Activated gates, `[batch, time, 4 * units]`.
    gates: Vec<f64>,
    /// Cell states, `[batch, time, units]`.
    cells: Vec<f64>,
    /// Hidden states, `[batch, time, units]`.
    hidden: Vec<f64>,
}

impl Lstm {
    pub fn new(inputs: usize, units: usize, return_sequences: bool, rng: &mut dyn RngCore) -> Self {
        let g = 4 * units;
        let kernel = Param::kernel(vec![inputs, g], glorot_limit(inputs, g), rng);
        let recurrent = Param::kernel(vec![units, g], glorot_limit(units, g), rng);
        let mut bias = Param::zeros(vec![g]);
        bias.value[units..2 * units].fill(1.0);
        Lstm {
            inputs,
            units,
            return_sequences,
            kernel,
            recurrent,
            bias,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, steps, feat) = seq_dims(x.shape())?;
        if feat != self.inputs {
            return Err(Error::shape(format!("{} input features", self.inputs), feat));
        }
        if steps == 0 {
            return Err(Error::shape("at least one time step", 0));
        }
        let u = self.units;
        let g4 = 4 * u;
        let rows = b * steps;
        let mut gates = Vec::with_capacity(rows * g4);
        for _ in 0..rows {
            gates.extend_from_slice(&self.bias.value);
        }
        gemm(
            1.0,
            MatRef::new(x.data(), rows, feat),
            MatRef::new(&self.kernel.value, feat, g4),
            1.0,
            &mut gates,
            g4,
        );
        let mut cells = vec![0.0; rows * u];
        let mut hidden = vec![0.0; rows * u];
        for t in 0..steps {
            if t > 0 {
                gemm(
                    1.0,
                    MatRef::strided(&hidden[(t - 1) * u..], b, u, steps * u),
                    MatRef::new(&self.recurrent.value, u, g4),
                    1.0,
                    &mut gates[t * g4..],
                    steps * g4,
                );
            }
            for bi in 0..b {
                let r = bi * steps + t;
                let z = &mut gates[r * g4..(r + 1) * g4];
                for j in 0..u {
                    let i = sigmoid(z[j]);
                    let f = sigmoid(z[u + j]);
                    let c_tilde = z[2 * u + j].tanh();
                    let o = sigmoid(z[3 * u + j]);
                    z[j] = i;
                    z[u + j] = f;
                    z[2 * u + j] = c_tilde;
                    z[3 * u + j] = o;
                    let c_prev = if t > 0 { cells[(r - 1) * u + j] } else { 0.0 };
                    let c = f * c_prev + i * c_tilde;
                    cells[r * u + j] = c;
                    hidden[r * u + j] = o * c.tanh();
                }
            }
        }
        let out = if self.return_sequences {
            Tensor::new(vec![b, steps, u], hidden.clone())?
        } else {
            let mut last = Vec::with_capacity(b * u);
            for bi in 0..b {
                let r = bi * steps + steps - 1;
                last.extend_from_slice(&hidden[r * u..(r + 1) * u]);
            }
            Tensor::new(vec![b, u], last)?
        };
        self.cache = Some(LstmCache {
            input: x.clone(),
            batch: b,
            steps,
            gates,
            cells,
            hidden,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("lstm backward called before forward".into()))?;
        let (b, steps, u) = (cache.batch, cache.steps, self.units);
        let g4 = 4 * u;
        let expected: &[usize] = if self.return_sequences { &[b, steps, u] } else { &[b, u] };
        if grad.shape() != expected {
            return Err(Error::shape(format!("{expected:?}"), format!("{:?}", grad.shape())));
        }
        let gd = grad.data();
        let mut dz = vec![0.0; b * steps * g4];
        let mut dh_next = vec![0.0; b * u];
        let mut dc_next = vec![0.0; b * u];
        for t in (0..steps).rev() {
            for bi in 0..b {
                let r = bi * steps + t;
                let z = &cache.gates[r * g4..(r + 1) * g4];
                let d = &mut dz[r * g4..(r + 1) * g4];
                for j in 0..u {
                    let mut dh = dh_next[bi * u + j];
                    if self.return_sequences {
                        dh += gd[r * u + j];
                    } else if t == steps - 1 {
                        dh += gd[bi * u + j];
                    }
                    let (i, f, c_tilde, o) = (z[j], z[u + j], z[2 * u + j], z[3 * u + j]);
                    let c = cache.cells[r * u + j];
                    let tc = c.tanh();
                    let c_prev = if t > 0 { cache.cells[(r - 1) * u + j] } else { 0.0 };
                    let dc = dc_next[bi * u + j] + dh * o * (1.0 - tc * tc);
                    d[j] = dc * c_tilde * i * (1.0 - i);
                    d[u + j] = dc * c_prev * f * (1.0 - f);
                    d[2 * u + j] = dc * i * (1.0 - c_tilde * c_tilde);
                    d[3 * u + j] = dh * tc * o * (1.0 - o);
                    dc_next[bi * u + j] = dc * f;
                }
            }
            if t > 0 {
                gemm(
                    1.0,
                    MatRef::strided(&dz[t * g4..], b, g4, steps * g4),
                    MatRef::new(&self.recurrent.value, u, g4).t(),
                    0.0,
                    &mut dh_next,
                    u,
                );
            }
        }
        let rows = b * steps;
        // Hidden state entering each step; zero at t = 0.
        let mut h_prev = vec![0.0; rows * u];
        for bi in 0..b {
            for t in 1..steps {
                let r = bi * steps + t;
                h_prev[r * u..(r + 1) * u].copy_from_slice(&cache.hidden[(r - 1) * u..r * u]);
            }
        }
        gemm(
            1.0,
            MatRef::new(&h_prev, rows, u).t(),
            MatRef::new(&dz, rows, g4),
            0.0,
            &mut self.recurrent.grad,
            g4,
        );
        let feat = self.inputs;
        gemm(
            1.0,
            MatRef::new(cache.input.data(), rows, feat).t(),
            MatRef::new(&dz, rows, g4),
            0.0,
            &mut self.kernel.grad,
            g4,
        );
        self.bias.grad.fill(0.0);
        for row in dz.chunks_exact(g4) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; rows * feat];
        gemm(
            1.0,
            MatRef::new(&dz, rows, g4),
            MatRef::new(&self.kernel.value, feat, g4).t(),
            0.0,
            &mut dx,
            feat,
        );
        Tensor::new(cache.input.shape().to_vec(), dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.kernel, &mut self.recurrent, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.kernel, &self.recurrent, &self.bias]
    }
}
