use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    timestep: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        for (name, b) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(config.step_size > 0.0 && config.epsilon > 0.0) {
            return Err(Error::Config("step size and epsilon must be positive".into()));
        }
        Ok(AdamState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            timestep: 0,
        })
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// One bias-corrected update of every parameter from its `grad` buffer.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        let arrays: Vec<(&mut [f64], &[f64])> = params
            .iter_mut()
            .map(|p| {
                let Param { value, grad, .. } = &mut **p;
                (value.as_mut_slice(), grad.as_slice())
            })
            .collect();
        self.step_arrays(arrays)
    }

    /// Same as [`AdamState::step`] over raw `(value, gradient)` pairs.
    pub fn step_arrays(&mut self, mut arrays: Vec<(&mut [f64], &[f64])>) -> Result<()> {
        if self.first.is_empty() {
            self.first = arrays.iter().map(|(v, _)| vec![0.0; v.len()]).collect();
            self.second = self.first.clone();
        }
        if arrays.len() != self.first.len() {
            return Err(Error::shape(format!("{} parameter arrays", self.first.len()), arrays.len()));
        }
        for (k, (value, grad)) in arrays.iter().enumerate() {
            if value.len() != grad.len() || value.len() != self.first[k].len() {
                return Err(Error::shape(
                    format!("array {k} of length {}", self.first[k].len()),
                    format!("value {} / gradient {}", value.len(), grad.len()),
                ));
            }
        }
        self.timestep += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.timestep as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        for (k, (value, grad)) in arrays.iter_mut().enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                value[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
