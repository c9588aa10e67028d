#![allow(dead_code)]

use std::path::PathBuf;

use open_sslac::nn::{
    grad_check, softmax_cross_entropy_with_indices, GradCheckReport, LayerSpec, Loss, NnError,
    Sequential, Tensor, WeightInit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const BATCH_NORM_TOLERANCE: f64 = 1e-2;
pub const SEEDS: u64 = 10;

/// Directory holding `mnist/` and `fashion/` IDX files.
pub fn data_dir() -> PathBuf {
    std::env::var_os("OPENSSLAC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values bounded away from zero, so ReLU kinks sit far outside `EPS`.
fn kink_free_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random_tensor(shape, rng).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// `sum(out * weights)` for fixed random weights.
fn weighted_sum(weights: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> Result<Loss<f64>, NnError> {
    move |out: &Tensor<f64>| {
        let value = out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(Loss {
            value,
            grad: weights.clone(),
        })
    }
}

pub struct Case {
    pub name: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

fn check_stack(
    name: &str,
    input_shape: &[usize],
    specs: &[LayerSpec],
    training: bool,
    tolerance: f64,
    seed: u64,
) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::<f64>::build(
        name,
        input_shape,
        specs,
        WeightInit::Normal { std: 0.5 },
        &mut rng,
        ChaCha8Rng::seed_from_u64(seed ^ 0xA5),
    )
    .unwrap();
    // non-zero biases and affine parameters
    for p in net.params_mut().iter_mut() {
        if p.trainable && p.value.shape().len() == 1 {
            let v = random_tensor(p.value.shape(), &mut rng).map(|x| 0.3 * x);
            p.value = v;
        }
    }
    let mut shape = vec![3];
    shape.extend_from_slice(input_shape);
    let x = kink_free_tensor(&shape, &mut rng);
    let mut out_shape = vec![3];
    out_shape.extend_from_slice(net.output_shape());
    let w = random_tensor(&out_shape, &mut rng);
    let report = grad_check(&mut net, &x, training, EPS, weighted_sum(w)).unwrap();
    Case {
        name: format!("{name} seed {seed}"),
        report,
        tolerance,
    }
}

/// Conv, nonlinearity and dense head under softmax cross-entropy.
fn check_composite(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let classes = 4;
    let filters = rng.random_range(2..5);
    let stride = rng.random_range(1..3);
    let act = if rng.random_bool(0.5) {
        LayerSpec::Relu
    } else {
        LayerSpec::Tanh
    };
    let specs = [
        LayerSpec::Conv { filters, stride },
        act,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: classes },
    ];
    let mut net = Sequential::<f64>::build(
        "composite",
        &[5, 5, 2],
        &specs,
        WeightInit::Normal { std: 0.4 },
        &mut rng,
        ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let x = kink_free_tensor(&[3, 5, 5, 2], &mut rng);
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..classes)).collect();
    let report = grad_check(&mut net, &x, true, EPS, |out| {
        softmax_cross_entropy_with_indices(out, &labels, classes)
    })
    .unwrap();
    Case {
        name: format!("conv-act-dense-xent seed {seed}"),
        report,
        tolerance: TOLERANCE,
    }
}

/// Every layer kind on its own, plus the composite, for `SEEDS` seeds.
pub fn grad_check_suite() -> Vec<Case> {
    let mut cases = Vec::new();
    for seed in 0..SEEDS {
        let single: Vec<(&str, Vec<usize>, Vec<LayerSpec>, bool, f64)> = vec![
            ("dense", vec![4], vec![LayerSpec::Dense { units: 3 }], true, TOLERANCE),
            ("conv-s1", vec![5, 5, 2], vec![LayerSpec::Conv { filters: 3, stride: 1 }], true, TOLERANCE),
            ("conv-s2", vec![6, 6, 2], vec![LayerSpec::Conv { filters: 3, stride: 2 }], true, TOLERANCE),
            ("upsample2x", vec![3, 3, 2], vec![LayerSpec::Upsample2x], true, TOLERANCE),
            ("relu", vec![6], vec![LayerSpec::Relu], true, TOLERANCE),
            ("tanh", vec![6], vec![LayerSpec::Tanh], true, TOLERANCE),
            ("dropout", vec![6], vec![LayerSpec::Dropout { rate: 0.4 }], true, TOLERANCE),
            ("gaussian-noise", vec![6], vec![LayerSpec::GaussianNoise { std: 0.2 }], true, TOLERANCE),
            ("flatten", vec![2, 2, 2], vec![LayerSpec::Flatten], true, TOLERANCE),
            ("reshape", vec![8], vec![LayerSpec::Reshape { shape: vec![2, 2, 2] }], true, TOLERANCE),
            (
                "batch-norm-inference",
                vec![4],
                vec![LayerSpec::BatchNorm { momentum: 0.8 }],
                false,
                TOLERANCE,
            ),
            (
                "batch-norm-training",
                vec![4],
                vec![LayerSpec::BatchNorm { momentum: 0.8 }],
                true,
                BATCH_NORM_TOLERANCE,
            ),
            (
                "batch-norm-training-conv",
                vec![3, 3, 2],
                vec![LayerSpec::BatchNorm { momentum: 0.8 }],
                true,
                BATCH_NORM_TOLERANCE,
            ),
        ];
        for (name, shape, specs, training, tol) in single {
            cases.push(check_stack(name, &shape, &specs, training, tol, seed));
        }
        cases.push(check_composite(seed));
    }
    cases
}
