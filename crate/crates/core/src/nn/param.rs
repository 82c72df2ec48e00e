use rand::{Rng, RngCore};

/// A trainable array together with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Kernels carry the number of output units (last axis) so a max-norm
    /// constraint can be applied per unit. Biases and scales do not.
    pub(crate) kernel_units: Option<usize>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            shape,
            value: vec![0.0; n],
            grad: vec![0.0; n],
            kernel_units: None,
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let mut p = Param::zeros(shape);
        p.value.fill(v);
        p
    }

    pub(crate) fn kernel(shape: Vec<usize>, limit: f64, rng: &mut dyn RngCore) -> Self {
        let units = *shape.last().expect("kernel has at least one axis");
        let mut p = Param::zeros(shape);
        for v in &mut p.value {
            *v = rng.random_range(-limit..limit);
        }
        p.kernel_units = Some(units);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_kernel(&self) -> bool {
        self.kernel_units.is_some()
    }

    /// Rescale each output unit's incoming weight vector to an L2 norm of at most `cap`.
    pub fn apply_max_norm(&mut self, cap: f64) {
        let Some(units) = self.kernel_units else {
            return;
        };
        let rows = self.value.len() / units;
        for u in 0..units {
            let norm = (0..rows)
                .map(|r| self.value[r * units + u].powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > cap {
                let scale = cap / (norm + 1e-7);
                for r in 0..rows {
                    self.value[r * units + u] *= scale;
                }
            }
        }
    }
}

/// He-uniform limit for layers feeding a ReLU.
pub(crate) fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
