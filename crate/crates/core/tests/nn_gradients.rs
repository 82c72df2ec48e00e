mod common;

use common::gradcheck::{self, check, check_layer_case, layer_cases, random_tensor, REL_TOL};
use ntl_change::nn::{Init, Layer, LayerSpec, Mode, Network, Padding, Regularization, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, spec, shape) in layer_cases() {
        for seed in 0..5 {
            let r = check_layer_case(&spec, &shape, seed);
            assert!(r.checked > 0, "{name}: nothing checked");
            assert!(
                r.max_rel_error < REL_TOL,
                "{name} seed {seed}: relative error {:.3e}",
                r.max_rel_error
            );
        }
    }
}

fn small_stack(rng: &mut ChaCha8Rng) -> Network {
    let specs = vec![
        LayerSpec::Conv1d {
            in_channels: 1,
            filters: 3,
            kernel: 3,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { width: 2, stride: 2 },
        LayerSpec::Batchnorm { features: 3 },
        LayerSpec::Dropout { rate: 0.1 },
        LayerSpec::Lstm {
            inputs: 3,
            units: 4,
            return_sequences: false,
        },
        LayerSpec::Dense {
            inputs: 4,
            units: 3,
            init: Init::HeUniform,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 3,
            units: 2,
            init: Init::GlorotUniform,
        },
    ];
    let reg = Regularization {
        max_norm: Some(3.0),
        activity_l2: 0.05,
    };
    Network::new(specs, vec![7], reg, rng).unwrap()
}

#[test]
fn mixed_network_with_activity_penalty() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = small_stack(&mut rng);
        let x = random_tensor(vec![4, 8, 1], &mut rng);
        let r = check(&mut net, &x, seed, 500);
        assert!(r.max_rel_error < REL_TOL, "seed {seed}: {:.3e}", r.max_rel_error);
    }
}

#[test]
fn conv1d_valid_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = Layer::build(
        &LayerSpec::Conv1d {
            in_channels: 1,
            filters: 1,
            kernel: 3,
            padding: Padding::Valid,
        },
        &mut rng,
    )
    .unwrap();
    let p = &mut layer.params_mut();
    p[0].value.copy_from_slice(&[1.0, 0.0, -1.0]);
    p[1].value[0] = 0.0;
    let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = layer.forward(&x, Mode::Infer, &mut rng).unwrap();
    assert_eq!(y.data(), &[-2.0, -2.0]);
}

#[test]
fn maxpool_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = Layer::build(&LayerSpec::Maxpool1d { width: 2, stride: 2 }, &mut rng).unwrap();
    let x = Tensor::new(vec![1, 4], vec![1.0, 3.0, 2.0, 5.0]).unwrap();
    assert_eq!(layer.forward(&x, Mode::Infer, &mut rng).unwrap().data(), &[3.0, 5.0]);
}

#[test]
fn identity_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut layer = Layer::build(
        &LayerSpec::Dense {
            inputs: 3,
            units: 3,
            init: Init::GlorotUniform,
        },
        &mut rng,
    )
    .unwrap();
    {
        let mut p = layer.params_mut();
        p[0].value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        p[1].value.fill(0.0);
    }
    let x = Tensor::new(vec![2, 3], vec![1.5, -2.0, 0.25, 3.0, 4.0, -5.0]).unwrap();
    assert_eq!(layer.forward(&x, Mode::Train, &mut rng).unwrap(), x);
}

#[test]
fn dropout_is_identity_at_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut layer = Layer::build(&LayerSpec::Dropout { rate: 0.5 }, &mut rng).unwrap();
    let x = random_tensor(vec![3, 7], &mut rng);
    assert_eq!(layer.forward(&x, Mode::Infer, &mut rng).unwrap(), x);
}

#[test]
fn dropout_expectation_matches_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut layer = Layer::build(&LayerSpec::Dropout { rate: 0.1 }, &mut rng).unwrap();
    let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let samples = 10_000;
    let mut mean = vec![0.0; 4];
    for _ in 0..samples {
        let y = layer.forward(&x, Mode::Train, &mut rng).unwrap();
        for (m, v) in mean.iter_mut().zip(y.data()) {
            *m += v / samples as f64;
        }
    }
    for (m, v) in mean.iter().zip(x.data()) {
        assert!((m - v).abs() <= 0.02 * v.abs(), "{m} vs {v}");
    }
}

#[test]
fn single_step_lstm_is_one_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = LayerSpec::Lstm {
        inputs: 2,
        units: 3,
        return_sequences: false,
    };
    let mut layer = Layer::build(&spec, &mut rng).unwrap();
    let x = random_tensor(vec![2, 1, 2], &mut rng);
    let y = layer.forward(&x, Mode::Infer, &mut rng).unwrap();
    let p = layer.params();
    let (w, b) = (&p[0].value, &p[2].value);
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    for bi in 0..2 {
        let xi = &x.data()[bi * 2..bi * 2 + 2];
        let z = |col: usize| b[col] + xi[0] * w[col] + xi[1] * w[12 + col];
        for j in 0..3 {
            // zero initial state: c = i * g, h = o * tanh(c)
            let c = sig(z(j)) * z(6 + j).tanh();
            let h = sig(z(9 + j)) * c.tanh();
            assert!((y.data()[bi * 3 + j] - h).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_before_forward_is_a_state_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (_, spec, shape) in layer_cases() {
        let mut layer = Layer::build(&spec, &mut rng).unwrap();
        let g = Tensor::zeros(shape);
        assert!(matches!(layer.backward(&g), Err(ntl_change::Error::State(_))));
    }
}

#[test]
fn outputs_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = small_stack(&mut rng);
    let x = random_tensor(vec![5, 8, 1], &mut rng);
    let y = net.forward(&x, Mode::Train, &mut rng).unwrap();
    assert!(y.is_finite());
    let dx = net.backward(&Tensor::new(y.shape().to_vec(), vec![1.0; y.len()]).unwrap()).unwrap();
    assert!(dx.is_finite());
    assert!(net.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite())));
    let _ = gradcheck::STEP;
}
