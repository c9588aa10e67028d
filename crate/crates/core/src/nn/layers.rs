use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelParams, NnError, ParamId, Real, Tensor};

/// Convolution kernels are always 3x3 with "same" padding.
pub const KERNEL: usize = 3;

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { filters: usize, stride: usize },
    Upsample2x,
    BatchNorm { momentum: f64 },
    Relu,
    Tanh,
    Dropout { rate: f64 },
    GaussianNoise { std: f64 },
    Flatten,
    Reshape { shape: Vec<usize> },
}

/// Kernel initialisation scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightInit {
    Normal { std: f64 },
    HeNormal,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::Normal { std: 0.02 }
    }
}

impl WeightInit {
    fn std(&self, fan_in: usize) -> f64 {
        match *self {
            WeightInit::Normal { std } => std,
            WeightInit::HeNormal => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Output size and leading pad for a "same"-padded 3-wide window.
pub fn same_padding(input: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + KERNEL).saturating_sub(input);
    (out, total / 2)
}

struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
}

enum Layer<T> {
    Dense {
        inputs: usize,
        outputs: usize,
        weight: ParamId,
        bias: ParamId,
        input: Option<Tensor<T>>,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weight: ParamId,
        bias: ParamId,
        input: Option<Tensor<T>>,
    },
    Upsample {
        input_shape: Option<Vec<usize>>,
    },
    BatchNorm {
        channels: usize,
        momentum: T,
        epsilon: T,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        cache: Option<BnCache<T>>,
    },
    Relu {
        output: Option<Tensor<T>>,
    },
    Tanh {
        output: Option<Tensor<T>>,
    },
    Dropout {
        rate: f64,
        mask: Option<Option<Vec<T>>>,
    },
    GaussianNoise {
        std: f64,
        seen: bool,
    },
    Reshape {
        target: Vec<usize>,
        input_shape: Option<Vec<usize>>,
    },
}

/// A feed-forward stack of layers with its own parameters and its own
/// random stream for dropout and noise.
pub struct Sequential<T> {
    name: String,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    params: ModelParams<T>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<T: Real> std::fmt::Debug for Sequential<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sequential")
            .field("name", &self.name)
            .field("input_shape", &self.input_shape)
            .field("output_shape", &self.output_shape)
            .field("params", &self.params.trainable_count())
            .finish()
    }
}

fn normal_tensor<T: Real>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

impl<T: Real> Sequential<T> {
    /// Builds the stack, propagating the per-sample `input_shape` through
    /// every layer. Parameter names are `"{name}/{layer index}/{role}"`.
    pub fn build(
        name: &str,
        input_shape: &[usize],
        specs: &[LayerSpec],
        init: WeightInit,
        init_rng: &mut ChaCha8Rng,
        noise_rng: ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let mut params = ModelParams::new();
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let pname = |role: &str| format!("{name}/{i}/{role}");
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("dense expects a flat input, got {shape:?}"),
                        });
                    }
                    let inputs = shape[0];
                    let weight = params.add(
                        pname("kernel"),
                        normal_tensor(&[inputs, units], init.std(inputs), init_rng),
                        true,
                    )?;
                    let bias = params.add(pname("bias"), Tensor::zeros(&[units]), true)?;
                    shape = vec![units];
                    Layer::Dense {
                        inputs,
                        outputs: units,
                        weight,
                        bias,
                        input: None,
                    }
                }
                LayerSpec::Conv { filters, stride } => {
                    if shape.len() != 3 {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("conv expects (h, w, c), got {shape:?}"),
                        });
                    }
                    if stride != 1 && stride != 2 {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("conv stride must be 1 or 2, got {stride}"),
                        });
                    }
                    let in_channels = shape[2];
                    let fan_in = KERNEL * KERNEL * in_channels;
                    let weight = params.add(
                        pname("kernel"),
                        normal_tensor(
                            &[KERNEL, KERNEL, in_channels, filters],
                            init.std(fan_in),
                            init_rng,
                        ),
                        true,
                    )?;
                    let bias = params.add(pname("bias"), Tensor::zeros(&[filters]), true)?;
                    let (oh, _) = same_padding(shape[0], stride);
                    let (ow, _) = same_padding(shape[1], stride);
                    shape = vec![oh, ow, filters];
                    Layer::Conv {
                        in_channels,
                        out_channels: filters,
                        stride,
                        weight,
                        bias,
                        input: None,
                    }
                }
                LayerSpec::Upsample2x => {
                    if shape.len() != 3 {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("upsample expects (h, w, c), got {shape:?}"),
                        });
                    }
                    shape = vec![shape[0] * 2, shape[1] * 2, shape[2]];
                    Layer::Upsample { input_shape: None }
                }
                LayerSpec::BatchNorm { momentum } => {
                    if !(0.0..1.0).contains(&momentum) {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("batch-norm momentum must be in [0, 1), got {momentum}"),
                        });
                    }
                    let channels = *shape.last().ok_or(NnError::BadLayer {
                        index: i,
                        reason: "batch-norm on a scalar".into(),
                    })?;
                    let gamma =
                        params.add(pname("gamma"), Tensor::full(&[channels], T::one()), true)?;
                    let beta = params.add(pname("beta"), Tensor::zeros(&[channels]), true)?;
                    let running_mean =
                        params.add(pname("running_mean"), Tensor::zeros(&[channels]), false)?;
                    let running_var = params.add(
                        pname("running_var"),
                        Tensor::full(&[channels], T::one()),
                        false,
                    )?;
                    Layer::BatchNorm {
                        channels,
                        momentum: T::from_f64_lossy(momentum),
                        epsilon: T::from_f64_lossy(1e-3),
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        cache: None,
                    }
                }
                LayerSpec::Relu => Layer::Relu { output: None },
                LayerSpec::Tanh => Layer::Tanh { output: None },
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!(
                                "dropout rate {rate} leaves a non-positive keep probability"
                            ),
                        });
                    }
                    Layer::Dropout { rate, mask: None }
                }
                LayerSpec::GaussianNoise { std } => {
                    if std < 0.0 || !std.is_finite() {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("noise std must be non-negative, got {std}"),
                        });
                    }
                    Layer::GaussianNoise { std, seen: false }
                }
                LayerSpec::Flatten => {
                    let n = shape.iter().product();
                    shape = vec![n];
                    Layer::Reshape {
                        target: shape.clone(),
                        input_shape: None,
                    }
                }
                LayerSpec::Reshape { shape: ref target } => {
                    let from: usize = shape.iter().product();
                    let to: usize = target.iter().product();
                    if from != to {
                        return Err(NnError::BadLayer {
                            index: i,
                            reason: format!("cannot reshape {shape:?} into {target:?}"),
                        });
                    }
                    shape = target.clone();
                    Layer::Reshape {
                        target: target.clone(),
                        input_shape: None,
                    }
                }
            };
            layers.push(layer);
        }
        debug_assert!(params.check_unique());
        Ok(Sequential {
            name: name.to_string(),
            specs: specs.to_vec(),
            layers,
            params,
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            rng: noise_rng,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Runs the stack on a batch `(batch, input_shape...)`. Dropout and
    /// Gaussian noise are identities unless `training` is set; batch-norm
    /// uses batch statistics (and updates its running averages) only in
    /// training mode.
    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>, NnError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..]
        {
            let mut expected = vec![x.rows()];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                expected,
                actual: x.shape().to_vec(),
            });
        }
        let mut h = x.clone();
        for layer in self.layers.iter_mut() {
            h = layer.forward(h, training, &mut self.params, &mut self.rng)?;
        }
        Ok(h)
    }

    /// Back-propagates `grad_output` (the loss gradient w.r.t. the last
    /// forward output), accumulating into parameter gradients. Returns the
    /// gradient w.r.t. the network input when `want_input_grad` is set.
    pub fn backward(
        &mut self,
        grad_output: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let n = self.layers.len();
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let need = i > 0 || want_input_grad;
            match layer.backward(g, need, &mut self.params)? {
                Some(next) => g = next,
                None => {
                    debug_assert_eq!(i, 0);
                    self.params.mark_grads();
                    return Ok(None);
                }
            }
        }
        self.params.mark_grads();
        if n == 0 || want_input_grad {
            Ok(Some(g))
        } else {
            Ok(None)
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }
}

impl<T: Real> Layer<T> {
    fn forward(
        &mut self,
        x: Tensor<T>,
        training: bool,
        params: &mut ModelParams<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                weight,
                bias,
                input,
            } => {
                let batch = x.rows();
                let mut out = Tensor::zeros(&[batch, *outputs]);
                let b = params.get(*bias).value.data();
                for r in out.data_mut().chunks_mut(*outputs) {
                    r.copy_from_slice(b);
                }
                T::gemm(
                    batch,
                    *inputs,
                    *outputs,
                    T::one(),
                    x.data(),
                    false,
                    params.get(*weight).value.data(),
                    false,
                    T::one(),
                    out.data_mut(),
                );
                *input = Some(x);
                Ok(out)
            }
            Layer::Conv {
                in_channels,
                out_channels,
                stride,
                weight,
                bias,
                input,
            } => {
                let out = conv_forward(
                    &x,
                    *in_channels,
                    *out_channels,
                    *stride,
                    params.get(*weight).value.data(),
                    params.get(*bias).value.data(),
                );
                *input = Some(x);
                Ok(out)
            }
            Layer::Upsample { input_shape } => {
                let s = x.shape();
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                let mut out = Tensor::zeros(&[n, h * 2, w * 2, c]);
                let src = x.data();
                let dst = out.data_mut();
                for b in 0..n {
                    for y in 0..h * 2 {
                        for xx in 0..w * 2 {
                            let si = ((b * h + y / 2) * w + xx / 2) * c;
                            let di = ((b * h * 2 + y) * w * 2 + xx) * c;
                            dst[di..di + c].copy_from_slice(&src[si..si + c]);
                        }
                    }
                }
                *input_shape = Some(s.to_vec());
                Ok(out)
            }
            Layer::BatchNorm {
                channels,
                momentum,
                epsilon,
                gamma,
                beta,
                running_mean,
                running_var,
                cache,
            } => {
                let c = *channels;
                let m = x.len() / c;
                let (mean, var) = if training {
                    let mut mean = vec![T::zero(); c];
                    for row in x.data().chunks(c) {
                        for (acc, &v) in mean.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let mf = T::from_usize(m).expect("count fits");
                    mean.iter_mut().for_each(|v| *v = *v / mf);
                    let mut var = vec![T::zero(); c];
                    for row in x.data().chunks(c) {
                        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                            let d = v - mu;
                            *acc += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v = *v / mf);
                    let one = T::one();
                    let rm = params.get_mut(*running_mean).value.data_mut();
                    for (r, &b) in rm.iter_mut().zip(&mean) {
                        *r = *momentum * *r + (one - *momentum) * b;
                    }
                    let rv = params.get_mut(*running_var).value.data_mut();
                    for (r, &b) in rv.iter_mut().zip(&var) {
                        *r = *momentum * *r + (one - *momentum) * b;
                    }
                    (mean, var)
                } else {
                    (
                        params.get(*running_mean).value.data().to_vec(),
                        params.get(*running_var).value.data().to_vec(),
                    )
                };
                let inv_std: Vec<T> = var.iter().map(|&v| (v + *epsilon).sqrt().recip()).collect();
                let g = params.get(*gamma).value.data();
                let b = params.get(*beta).value.data();
                let mut xhat = vec![T::zero(); x.len()];
                let mut out = Tensor::zeros(x.shape());
                for ((xr, hr), or) in x
                    .data()
                    .chunks(c)
                    .zip(xhat.chunks_mut(c))
                    .zip(out.data_mut().chunks_mut(c))
                {
                    for j in 0..c {
                        let h = (xr[j] - mean[j]) * inv_std[j];
                        hr[j] = h;
                        or[j] = g[j] * h + b[j];
                    }
                }
                *cache = Some(BnCache {
                    xhat,
                    inv_std,
                    training,
                });
                Ok(out)
            }
            Layer::Relu { output } => {
                let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
                *output = Some(out.clone());
                Ok(out)
            }
            Layer::Tanh { output } => {
                let out = x.map(|v| v.tanh());
                *output = Some(out.clone());
                Ok(out)
            }
            Layer::Dropout { rate, mask } => {
                if !training || *rate == 0.0 {
                    *mask = Some(None);
                    return Ok(x);
                }
                let keep = 1.0 - *rate;
                let scale = T::from_f64_lossy(1.0 / keep);
                let m: Vec<T> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let mut out = x;
                for (v, &k) in out.data_mut().iter_mut().zip(&m) {
                    *v *= k;
                }
                *mask = Some(Some(m));
                Ok(out)
            }
            Layer::GaussianNoise { std, seen } => {
                *seen = true;
                if !training || *std == 0.0 {
                    return Ok(x);
                }
                let mut out = x;
                for v in out.data_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += T::from_f64_lossy(z * *std);
                }
                Ok(out)
            }
            Layer::Reshape {
                target,
                input_shape,
            } => {
                let mut shape = vec![x.rows()];
                shape.extend_from_slice(target);
                *input_shape = Some(x.shape().to_vec());
                x.reshape(&shape)
            }
        }
    }

    /// Returns `Ok(None)` only when `need_input_grad` is false.
    fn backward(
        &mut self,
        g: Tensor<T>,
        need_input_grad: bool,
        params: &mut ModelParams<T>,
    ) -> Result<Option<Tensor<T>>, NnError> {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                weight,
                bias,
                input,
            } => {
                let x = input.take().ok_or(NnError::NoForward)?;
                let batch = x.rows();
                check_grad_shape(&g, &[batch, *outputs])?;
                {
                    let gb = params.get_mut(*bias).grad.data_mut();
                    for r in g.data().chunks(*outputs) {
                        for (a, &v) in gb.iter_mut().zip(r) {
                            *a += v;
                        }
                    }
                }
                T::gemm(
                    *inputs,
                    batch,
                    *outputs,
                    T::one(),
                    x.data(),
                    true,
                    g.data(),
                    false,
                    T::one(),
                    params.get_mut(*weight).grad.data_mut(),
                );
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(x.shape());
                T::gemm(
                    batch,
                    *outputs,
                    *inputs,
                    T::one(),
                    g.data(),
                    false,
                    params.get(*weight).value.data(),
                    true,
                    T::zero(),
                    dx.data_mut(),
                );
                Ok(Some(dx))
            }
            Layer::Conv {
                in_channels,
                out_channels,
                stride,
                weight,
                bias,
                input,
            } => {
                let x = input.take().ok_or(NnError::NoForward)?;
                let (oh, _) = same_padding(x.shape()[1], *stride);
                let (ow, _) = same_padding(x.shape()[2], *stride);
                check_grad_shape(&g, &[x.rows(), oh, ow, *out_channels])?;
                let w = params.get(*weight).value.data().to_vec();
                let (dw, db, dx) = conv_backward(
                    &x,
                    &g,
                    *in_channels,
                    *out_channels,
                    *stride,
                    &w,
                    need_input_grad,
                );
                for (a, v) in params.get_mut(*weight).grad.data_mut().iter_mut().zip(dw) {
                    *a += v;
                }
                for (a, v) in params.get_mut(*bias).grad.data_mut().iter_mut().zip(db) {
                    *a += v;
                }
                Ok(dx)
            }
            Layer::Upsample { input_shape } => {
                let s = input_shape.take().ok_or(NnError::NoForward)?;
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                check_grad_shape(&g, &[n, h * 2, w * 2, c])?;
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(&s);
                let src = g.data();
                let dst = dx.data_mut();
                for b in 0..n {
                    for y in 0..h * 2 {
                        for xx in 0..w * 2 {
                            let di = ((b * h + y / 2) * w + xx / 2) * c;
                            let si = ((b * h * 2 + y) * w * 2 + xx) * c;
                            for j in 0..c {
                                dst[di + j] += src[si + j];
                            }
                        }
                    }
                }
                Ok(Some(dx))
            }
            Layer::BatchNorm {
                channels,
                gamma,
                beta,
                cache,
                ..
            } => {
                let BnCache {
                    xhat,
                    inv_std,
                    training,
                } = cache.take().ok_or(NnError::NoForward)?;
                if g.len() != xhat.len() {
                    return Err(NnError::ShapeMismatch {
                        expected: vec![xhat.len()],
                        actual: g.shape().to_vec(),
                    });
                }
                let c = *channels;
                let m = xhat.len() / c;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (gr, hr) in g.data().chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dbeta[j] += gr[j];
                        dgamma[j] += gr[j] * hr[j];
                    }
                }
                let gam = params.get(*gamma).value.data().to_vec();
                for (a, v) in params.get_mut(*gamma).grad.data_mut().iter_mut().zip(&dgamma) {
                    *a += *v;
                }
                for (a, v) in params.get_mut(*beta).grad.data_mut().iter_mut().zip(&dbeta) {
                    *a += *v;
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(g.shape());
                if training {
                    let mf = T::from_usize(m).expect("count fits");
                    for ((dr, gr), hr) in dx
                        .data_mut()
                        .chunks_mut(c)
                        .zip(g.data().chunks(c))
                        .zip(xhat.chunks(c))
                    {
                        for j in 0..c {
                            dr[j] = gam[j] * inv_std[j] / mf
                                * (mf * gr[j] - dbeta[j] - hr[j] * dgamma[j]);
                        }
                    }
                } else {
                    for (dr, gr) in dx.data_mut().chunks_mut(c).zip(g.data().chunks(c)) {
                        for j in 0..c {
                            dr[j] = gam[j] * inv_std[j] * gr[j];
                        }
                    }
                }
                Ok(Some(dx))
            }
            Layer::Relu { output } => {
                let y = output.take().ok_or(NnError::NoForward)?;
                check_grad_shape(&g, y.shape())?;
                let mut dx = g;
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                Ok(Some(dx))
            }
            Layer::Tanh { output } => {
                let y = output.take().ok_or(NnError::NoForward)?;
                check_grad_shape(&g, y.shape())?;
                let mut dx = g;
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d *= T::one() - v * v;
                }
                Ok(Some(dx))
            }
            Layer::Dropout { mask, .. } => {
                let m = mask.take().ok_or(NnError::NoForward)?;
                let mut dx = g;
                if let Some(m) = m {
                    if m.len() != dx.len() {
                        return Err(NnError::ShapeMismatch {
                            expected: vec![m.len()],
                            actual: dx.shape().to_vec(),
                        });
                    }
                    for (d, &k) in dx.data_mut().iter_mut().zip(&m) {
                        *d *= k;
                    }
                }
                Ok(Some(dx))
            }
            Layer::GaussianNoise { seen, .. } => {
                if !std::mem::take(seen) {
                    return Err(NnError::NoForward);
                }
                Ok(Some(g))
            }
            Layer::Reshape { input_shape, .. } => {
                let s = input_shape.take().ok_or(NnError::NoForward)?;
                Ok(Some(g.reshape(&s)?))
            }
        }
    }
}

fn check_grad_shape<T: Real>(g: &Tensor<T>, expected: &[usize]) -> Result<(), NnError> {
    if g.shape() != expected {
        return Err(NnError::ShapeMismatch {
            expected: expected.to_vec(),
            actual: g.shape().to_vec(),
        });
    }
    Ok(())
}

/// Samples per im2col chunk, sized so one chunk's patch matrix stays a few
/// thousand rows. Fixed by the geometry only, so results never depend on
/// anything but the inputs.
fn conv_chunk(out_pixels: usize) -> usize {
    (4096 / out_pixels.max(1)).max(1)
}

struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    stride: usize,
}

impl ConvGeom {
    fn new(shape: &[usize], stride: usize) -> Self {
        let (oh, pad_top) = same_padding(shape[1], stride);
        let (ow, pad_left) = same_padding(shape[2], stride);
        ConvGeom {
            h: shape[1],
            w: shape[2],
            c: shape[3],
            oh,
            ow,
            pad_top,
            pad_left,
            stride,
        }
    }

    /// Input pixel feeding output `(oy, ox)` at kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

fn im2col<T: Real>(x: &[T], geom: &ConvGeom, first: usize, count: usize, cols: &mut [T]) {
    let c = geom.c;
    let row_len = KERNEL * KERNEL * c;
    cols.fill(T::zero());
    for b in 0..count {
        let img = &x[(first + b) * geom.h * geom.w * c..];
        for oy in 0..geom.oh {
            for ox in 0..geom.ow {
                let row = (b * geom.oh + oy) * geom.ow + ox;
                let dst = &mut cols[row * row_len..(row + 1) * row_len];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        if let Some((iy, ix)) = geom.source(oy, ox, ky, kx) {
                            let s = (iy * geom.w + ix) * c;
                            let d = (ky * KERNEL + kx) * c;
                            dst[d..d + c].copy_from_slice(&img[s..s + c]);
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], geom: &ConvGeom, first: usize, count: usize, dx: &mut [T]) {
    let c = geom.c;
    let row_len = KERNEL * KERNEL * c;
    for b in 0..count {
        let img = &mut dx[(first + b) * geom.h * geom.w * c..];
        for oy in 0..geom.oh {
            for ox in 0..geom.ow {
                let row = (b * geom.oh + oy) * geom.ow + ox;
                let src = &cols[row * row_len..(row + 1) * row_len];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        if let Some((iy, ix)) = geom.source(oy, ox, ky, kx) {
                            let d = (iy * geom.w + ix) * c;
                            let s = (ky * KERNEL + kx) * c;
                            for j in 0..c {
                                img[d + j] += src[s + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(
    x: &Tensor<T>,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    weight: &[T],
    bias: &[T],
) -> Tensor<T> {
    let geom = ConvGeom::new(x.shape(), stride);
    debug_assert_eq!(geom.c, in_channels);
    let n = x.rows();
    let pixels = geom.oh * geom.ow;
    let k = KERNEL * KERNEL * in_channels;
    let mut out = Tensor::zeros(&[n, geom.oh, geom.ow, out_channels]);
    for r in out.data_mut().chunks_mut(out_channels) {
        r.copy_from_slice(bias);
    }
    let chunk = conv_chunk(pixels);
    let mut cols = vec![T::zero(); chunk * pixels * k];
    let mut first = 0;
    while first < n {
        let count = chunk.min(n - first);
        let rows = count * pixels;
        im2col(x.data(), &geom, first, count, &mut cols[..rows * k]);
        let dst = &mut out.data_mut()[first * pixels * out_channels..(first + count) * pixels * out_channels];
        T::gemm(rows, k, out_channels, T::one(), &cols[..rows * k], false, weight, false, T::one(), dst);
        first += count;
    }
    out
}

type ConvGrads<T> = (Vec<T>, Vec<T>, Option<Tensor<T>>);

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    weight: &[T],
    need_input_grad: bool,
) -> ConvGrads<T> {
    let geom = ConvGeom::new(x.shape(), stride);
    let n = x.rows();
    let pixels = geom.oh * geom.ow;
    let k = KERNEL * KERNEL * in_channels;
    let mut dw = vec![T::zero(); k * out_channels];
    let mut db = vec![T::zero(); out_channels];
    for r in g.data().chunks(out_channels) {
        for (a, &v) in db.iter_mut().zip(r) {
            *a += v;
        }
    }
    let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    let chunk = conv_chunk(pixels);
    let mut cols = vec![T::zero(); chunk * pixels * k];
    let mut first = 0;
    while first < n {
        let count = chunk.min(n - first);
        let rows = count * pixels;
        let gchunk = &g.data()[first * pixels * out_channels..(first + count) * pixels * out_channels];
        im2col(x.data(), &geom, first, count, &mut cols[..rows * k]);
        T::gemm(k, rows, out_channels, T::one(), &cols[..rows * k], true, gchunk, false, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, out_channels, k, T::one(), gchunk, false, weight, true, T::zero(), &mut cols[..rows * k]);
            col2im(&cols[..rows * k], &geom, first, count, dx.data_mut());
        }
        first += count;
    }
    (dw, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
        (ChaCha8Rng::seed_from_u64(seed), ChaCha8Rng::seed_from_u64(seed + 1))
    }

    fn build(input: &[usize], specs: &[LayerSpec]) -> Sequential<f64> {
        let (mut a, b) = rngs(3);
        Sequential::build("t", input, specs, WeightInit::Normal { std: 0.5 }, &mut a, b).unwrap()
    }

    /// Direct-loop "same" convolution used as a reference.
    fn reference_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], cout: usize, stride: usize) -> Tensor<f64> {
        let s = x.shape();
        let (n, h, wd, c) = (s[0], s[1], s[2], s[3]);
        let (oh, pt) = same_padding(h, stride);
        let (ow, pl) = same_padding(wd, stride);
        let mut out = Tensor::zeros(&[n, oh, ow, cout]);
        for bi in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = b[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - pt as isize;
                                let ix = (ox * stride + kx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let xv = x.data()[((bi * h + iy as usize) * wd + ix as usize) * c + ci];
                                    let wv = w[((ky * 3 + kx) * c + ci) * cout + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((bi * oh + oy) * ow + ox) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn relu_definition() {
        let mut net = build(&[3], &[LayerSpec::Relu]);
        let x = Tensor::from_f64(&[1, 3], &[-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(net.forward(&x, false).unwrap().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn same_padding_arithmetic() {
        assert_eq!(same_padding(28, 2), (14, 0));
        assert_eq!(same_padding(14, 2), (7, 0));
        assert_eq!(same_padding(7, 2), (4, 1));
        assert_eq!(same_padding(28, 1), (28, 1));
    }

    #[test]
    fn conv_stride2_matches_reference() {
        let mut net = build(&[28, 28, 1], &[LayerSpec::Conv { filters: 4, stride: 2 }]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = normal_tensor::<f64>(&[2, 28, 28, 1], 1.0, &mut rng);
        let y = net.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[2, 14, 14, 4]);
        let w = net.params().by_name("t/0/kernel").unwrap().value.data().to_vec();
        let b = vec![0.0; 4];
        let r = reference_conv(&x, &w, &b, 4, 2);
        for (a, e) in y.data().iter().zip(r.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_odd_size_matches_reference() {
        let mut net = build(&[7, 5, 3], &[LayerSpec::Conv { filters: 2, stride: 2 }]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = normal_tensor::<f64>(&[3, 7, 5, 3], 1.0, &mut rng);
        let y = net.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[3, 4, 3, 2]);
        let w = net.params().by_name("t/0/kernel").unwrap().value.data().to_vec();
        let r = reference_conv(&x, &w, &[0.0, 0.0], 2, 2);
        for (a, e) in y.data().iter().zip(r.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_and_noise_identity_at_inference() {
        let mut net = build(
            &[4],
            &[LayerSpec::GaussianNoise { std: 0.3 }, LayerSpec::Dropout { rate: 0.5 }],
        );
        let x = Tensor::from_f64(&[2, 4], &[1.0, -2.0, 3.0, 0.5, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(net.forward(&x, false).unwrap(), x);
        assert_ne!(net.forward(&x, true).unwrap(), x);
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let (mut a, b) = rngs(0);
        let err = Sequential::<f64>::build(
            "t",
            &[4],
            &[LayerSpec::Dropout { rate: 1.0 }],
            WeightInit::default(),
            &mut a,
            b,
        );
        assert!(matches!(err, Err(NnError::BadLayer { .. })));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut net = build(&[4], &[LayerSpec::Dense { units: 2 }]);
        let err = net.forward(&Tensor::zeros(&[2, 5]), false).unwrap_err();
        match err {
            NnError::ShapeMismatch { expected, actual } => {
                assert_eq!(expected, vec![2, 4]);
                assert_eq!(actual, vec![2, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut net = build(&[4], &[LayerSpec::Dense { units: 2 }, LayerSpec::Relu]);
        assert!(matches!(
            net.backward(&Tensor::zeros(&[1, 2]), false),
            Err(NnError::NoForward)
        ));
    }

    #[test]
    fn sum_loss_gives_unit_bias_gradients() {
        let mut net = build(&[3], &[LayerSpec::Dense { units: 2 }]);
        let x = Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let y = net.forward(&x, false).unwrap();
        net.backward(&Tensor::full(y.shape(), 1.0), false).unwrap();
        let gb = net.params().by_name("t/0/bias").unwrap().grad.data().to_vec();
        assert_eq!(gb, vec![2.0, 2.0]);
        // dW[i][j] = sum over batch of x[i]
        let gw = net.params().by_name("t/0/kernel").unwrap().grad.data().to_vec();
        assert_eq!(gw, vec![0.0, 0.0, 2.0, 2.0, 7.0, 7.0]);
    }

    #[test]
    fn batch_norm_running_stats_follow_momentum() {
        let mut net = build(&[1], &[LayerSpec::BatchNorm { momentum: 0.8 }]);
        let x = Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap();
        let y = net.forward(&x, true).unwrap();
        // batch mean 2, var 1
        let rm = net.params().by_name("t/0/running_mean").unwrap().value.data()[0];
        let rv = net.params().by_name("t/0/running_var").unwrap().value.data()[0];
        assert!((rm - 0.4).abs() < 1e-12);
        assert!((rv - 1.0).abs() < 1e-12);
        let expect = 1.0 / (1.0f64 + 1e-3).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let mut net = build(&[1, 2, 1], &[LayerSpec::Upsample2x]);
        let x = Tensor::from_f64(&[1, 1, 2, 1], &[1.0, 2.0]).unwrap();
        let y = net.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 1]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn reshape_rejects_size_change() {
        let (mut a, b) = rngs(0);
        assert!(Sequential::<f64>::build(
            "t",
            &[12],
            &[LayerSpec::Reshape { shape: vec![2, 2, 2] }],
            WeightInit::default(),
            &mut a,
            b,
        )
        .is_err());
    }
}
