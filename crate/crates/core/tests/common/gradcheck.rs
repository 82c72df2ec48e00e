//! Central finite-difference oracle for layer and network gradients.
//!
//! The scalar objective is `sum(weights * output)` plus the network's activity
//! penalty, so the upstream gradient is simply `weights`.

use ntl_change::nn::{Init, Layer, LayerSpec, Mode, Network, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Anything whose forward pass can be re-run deterministically.
pub trait Probe {
    fn eval(&mut self, x: &Tensor, seed: u64) -> (Tensor, f64);
    fn backprop(&mut self, upstream: &Tensor) -> Tensor;
    fn param_count(&self) -> usize;
    fn param_value(&self, k: usize) -> f64;
    fn set_param(&mut self, k: usize, v: f64);
    fn param_grad(&self, k: usize) -> f64;
}

fn locate(sizes: impl Iterator<Item = usize>, mut k: usize) -> (usize, usize) {
    for (i, n) in sizes.enumerate() {
        if k < n {
            return (i, k);
        }
        k -= n;
    }
    panic!("parameter index out of range");
}

impl Probe for Layer {
    fn eval(&mut self, x: &Tensor, seed: u64) -> (Tensor, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (self.forward(x, Mode::Train, &mut rng).unwrap(), 0.0)
    }
    fn backprop(&mut self, upstream: &Tensor) -> Tensor {
        self.backward(upstream).unwrap()
    }
    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
    fn param_value(&self, k: usize) -> f64 {
        let params = self.params();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].value[j]
    }
    fn set_param(&mut self, k: usize, v: f64) {
        let mut params = self.params_mut();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].value[j] = v;
    }
    fn param_grad(&self, k: usize) -> f64 {
        let params = self.params();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].grad[j]
    }
}

impl Probe for Network {
    fn eval(&mut self, x: &Tensor, seed: u64) -> (Tensor, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.forward(x, Mode::Train, &mut rng).unwrap();
        (out, self.activity_penalty())
    }
    fn backprop(&mut self, upstream: &Tensor) -> Tensor {
        self.backward(upstream).unwrap()
    }
    fn param_count(&self) -> usize {
        self.parameter_count()
    }
    fn param_value(&self, k: usize) -> f64 {
        let params = self.params();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].value[j]
    }
    fn set_param(&mut self, k: usize, v: f64) {
        let mut params = self.params_mut();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].value[j] = v;
    }
    fn param_grad(&self, k: usize) -> f64 {
        let params = self.params();
        let (i, j) = locate(params.iter().map(|p| p.len()), k);
        params[i].grad[j]
    }
}

fn objective(out: &Tensor, penalty: f64, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(o, w)| o * w).sum::<f64>() + penalty
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckResult {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares analytic input and parameter gradients against central differences.
/// At most `max_params` parameters (evenly strided) are probed.
pub fn check<P: Probe>(probe: &mut P, x: &Tensor, seed: u64, max_params: usize) -> CheckResult {
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (out, _) = probe.eval(x, seed);
    let weights = random_tensor(out.shape().to_vec(), &mut wrng);
    let dx = probe.backprop(&weights);
    let n_params = probe.param_count();
    let analytic_params: Vec<f64> = (0..n_params).map(|k| probe.param_grad(k)).collect();

    let mut result = CheckResult::default();
    let mut record = |a: f64, n: f64| {
        result.max_rel_error = result.max_rel_error.max(rel_error(a, n));
        result.checked += 1;
    };

    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let (o, p) = probe.eval(&xp, seed);
        let up = objective(&o, p, &weights);
        xp.data_mut()[i] = orig - STEP;
        let (o, p) = probe.eval(&xp, seed);
        let down = objective(&o, p, &weights);
        xp.data_mut()[i] = orig;
        record(dx.data()[i], (up - down) / (2.0 * STEP));
    }

    let stride = (n_params / max_params.max(1)).max(1);
    for k in (0..n_params).step_by(stride) {
        let orig = probe.param_value(k);
        probe.set_param(k, orig + STEP);
        let (o, p) = probe.eval(x, seed);
        let up = objective(&o, p, &weights);
        probe.set_param(k, orig - STEP);
        let (o, p) = probe.eval(x, seed);
        let down = objective(&o, p, &weights);
        probe.set_param(k, orig);
        record(analytic_params[k], (up - down) / (2.0 * STEP));
    }
    result
}

/// One probe per layer kind (and per notable configuration), with the input shape to feed it.
pub fn layer_cases() -> Vec<(&'static str, LayerSpec, Vec<usize>)> {
    vec![
        (
            "dense",
            LayerSpec::Dense {
                inputs: 5,
                units: 4,
                init: Init::HeUniform,
            },
            vec![3, 5],
        ),
        (
            "conv1d_valid",
            LayerSpec::Conv1d {
                in_channels: 2,
                filters: 3,
                kernel: 3,
                padding: Padding::Valid,
            },
            vec![2, 7, 2],
        ),
        (
            "conv1d_same_even_kernel",
            LayerSpec::Conv1d {
                in_channels: 3,
                filters: 2,
                kernel: 4,
                padding: Padding::Same,
            },
            vec![2, 6, 3],
        ),
        ("maxpool1d", LayerSpec::Maxpool1d { width: 2, stride: 2 }, vec![2, 7, 3]),
        ("batchnorm_2d", LayerSpec::Batchnorm { features: 4 }, vec![5, 4]),
        ("batchnorm_3d", LayerSpec::Batchnorm { features: 3 }, vec![2, 4, 3]),
        ("dropout", LayerSpec::Dropout { rate: 0.3 }, vec![4, 6]),
        (
            "lstm_sequences",
            LayerSpec::Lstm {
                inputs: 2,
                units: 3,
                return_sequences: true,
            },
            vec![2, 5, 2],
        ),
        (
            "lstm_last",
            LayerSpec::Lstm {
                inputs: 1,
                units: 4,
                return_sequences: false,
            },
            vec![3, 6, 1],
        ),
        ("flatten", LayerSpec::Flatten, vec![2, 3, 4]),
        ("relu", LayerSpec::Relu, vec![3, 5]),
    ]
}

/// Worst relative error of one layer case at one seed.
pub fn check_layer_case(spec: &LayerSpec, shape: &[usize], seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::build(spec, &mut rng).unwrap();
    // Non-trivial batchnorm affine parameters and biases.
    for p in layer.params_mut() {
        for v in p.value.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let x = random_tensor(shape.to_vec(), &mut rng);
    check(&mut layer, &x, seed, 200)
}
