//! Analytic gradients against central finite differences, in f64.

use memscreen_nn::{bce_loss, Activation, LayerSpec, ModelGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

/// Linear read-out `sum(r * y)`, so dL/dy = r.
struct Probe {
    weights: Vec<f64>,
}

impl Probe {
    fn new(len: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weights: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn loss(&self, y: &Tensor<f64>) -> (f64, Tensor<f64>) {
        let l = y.data().iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        (l, Tensor::new(y.shape().to_vec(), self.weights.clone()).unwrap())
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Largest relative error over every parameter tensor and the input.
fn check_model(
    mut model: ModelGraph<f64>,
    x: Tensor<f64>,
    mask_seed: u64,
    loss: &dyn Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
) -> f64 {
    let eval = |m: &mut ModelGraph<f64>, x: &Tensor<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let y = m.forward(x, true, &mut rng).unwrap();
        loss(&y).0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let y = model.forward(&x, true, &mut rng).unwrap();
    let (_, dy) = loss(&y);
    let (grads, dx) = model.backward_with_input(&dy).unwrap();

    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let orig = model.parameters()[pi].data()[j];
            model.parameters_mut()[pi].data_mut()[j] = orig + H;
            let up = eval(&mut model, &x);
            model.parameters_mut()[pi].data_mut()[j] = orig - H;
            let down = eval(&mut model, &x);
            model.parameters_mut()[pi].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        worst = worst.max(relative_error(g.data(), &numeric));
    }

    let mut xp = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = xp.data()[j];
        xp.data_mut()[j] = orig + H;
        let up = eval(&mut model, &xp);
        xp.data_mut()[j] = orig - H;
        let down = eval(&mut model, &xp);
        xp.data_mut()[j] = orig;
        numeric.push((up - down) / (2.0 * H));
    }
    worst.max(relative_error(dx.data(), &numeric))
}

fn random_input(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run_probe_case(input: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(1..=3);
    let model = ModelGraph::<f64>::new(input.clone(), layers, seed).unwrap();
    // Non-zero biases so ReLU/sigmoid see shifted pre-activations.
    let mut model = model;
    for p in model.parameters_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let mut shape = vec![batch];
    shape.extend(input);
    let x = random_input(shape, &mut rng);
    let out_len = batch * model.output_shape().iter().product::<usize>();
    let probe = Probe::new(out_len, &mut rng);
    check_model(model, x, seed ^ 0xdead, &|y| probe.loss(y))
}

fn activation_for(i: u64) -> Activation {
    [Activation::None, Activation::Relu, Activation::Sigmoid][(i % 3) as usize]
}

#[test]
fn conv1d_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let len = rng.gen_range(3..=8);
        let channels = rng.gen_range(1..=3);
        let kernel = rng.gen_range(1..=len.min(3));
        let layers = vec![LayerSpec::Conv1D {
            kernel,
            filters: rng.gen_range(1..=4),
            activation: activation_for(seed),
        }];
        let err = run_probe_case(vec![len, channels], layers, 100 + seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn conv2d_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let h = rng.gen_range(3..=6);
        let w = rng.gen_range(3..=6);
        let layers = vec![LayerSpec::Conv2D {
            kernel: (rng.gen_range(1..=3), rng.gen_range(1..=3)),
            filters: rng.gen_range(1..=3),
            activation: activation_for(seed),
        }];
        let err = run_probe_case(vec![h, w, rng.gen_range(1..=3)], layers, 200 + seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn maxpool_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let err1 = run_probe_case(
            vec![rng.gen_range(2..=8), rng.gen_range(1..=3)],
            vec![LayerSpec::MaxPool1D],
            300 + seed,
        );
        let err2 = run_probe_case(
            vec![rng.gen_range(2..=7), rng.gen_range(2..=7), rng.gen_range(1..=3)],
            vec![LayerSpec::MaxPool2D],
            350 + seed,
        );
        assert!(err1 < TOLERANCE, "1d seed {seed}: {err1}");
        assert!(err2 < TOLERANCE, "2d seed {seed}: {err2}");
    }
}

#[test]
fn dense_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let layers = vec![LayerSpec::Dense {
            units: rng.gen_range(1..=6),
            activation: activation_for(seed),
        }];
        let err = run_probe_case(vec![rng.gen_range(3..=8)], layers, 400 + seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn dropout_with_fixed_mask_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = rng.gen_range(3..=8);
        let layers = vec![
            LayerSpec::Dense {
                units: n,
                activation: Activation::None,
            },
            LayerSpec::Dropout {
                rate: rng.gen_range(0.1..0.6),
            },
        ];
        let err = run_probe_case(vec![n], layers, 500 + seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn flatten_and_stack_gradients() {
    for seed in 0..5u64 {
        let layers = vec![
            LayerSpec::Conv2D {
                kernel: (2, 2),
                filters: 2,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool2D,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 3,
                activation: Activation::Relu,
            },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ];
        let err = run_probe_case(vec![5, 5, 2], layers, 600 + seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn bce_through_sigmoid_gradients() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let units = rng.gen_range(1..=3);
        let layers = vec![
            LayerSpec::Conv1D {
                kernel: 2,
                filters: 3,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool1D,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units,
                activation: Activation::Sigmoid,
            },
        ];
        let model = ModelGraph::<f64>::new(vec![6, 1], layers, seed).unwrap();
        let batch = rng.gen_range(1..=4);
        let x = random_input(vec![batch, 6, 1], &mut rng);
        let targets: Vec<f64> = (0..batch * units)
            .map(|_| f64::from(rng.gen_range(0..=1u8)))
            .collect();
        let t = Tensor::new(vec![batch, units], targets).unwrap();
        let err = check_model(model, x, 0, &|y| bce_loss(y, &t).unwrap());
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn bce_gradient_matches_difference_quotient() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    for _ in 0..5 {
        let n = rng.gen_range(3..=8);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..=1u8))).collect();
        let tt = Tensor::new(vec![n], t).unwrap();
        let pt = Tensor::new(vec![n], p.clone()).unwrap();
        let (_, g) = bce_loss(&pt, &tt).unwrap();
        let mut numeric = Vec::new();
        for j in 0..n {
            let mut up = p.clone();
            up[j] += H;
            let mut down = p.clone();
            down[j] -= H;
            let lu = bce_loss(&Tensor::new(vec![n], up).unwrap(), &tt).unwrap().0;
            let ld = bce_loss(&Tensor::new(vec![n], down).unwrap(), &tt).unwrap().0;
            numeric.push((lu - ld) / (2.0 * H));
        }
        assert!(relative_error(g.data(), &numeric) < TOLERANCE);
    }
}
