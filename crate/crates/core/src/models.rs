//! Generator and discriminator builders and the K+1 decision rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerSpec, NnError, Real, Sequential, Tensor, WeightInit};
use crate::seeding::{stream_rng, Stream};

/// Image side length of the convolutional path.
pub const IMAGE_SIDE: usize = 28;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("generator produces {actual:?}, expected {expected:?}")]
    OutputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Convolutional generator: dense projection to a small feature map, then
/// `(upsample, conv, batch-norm, relu)` blocks and a bounded 1-channel conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub z_length: usize,
    pub base_side: usize,
    pub base_channels: usize,
    pub block_filters: Vec<usize>,
    pub batch_norm_momentum: f64,
    pub init_std: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            z_length: 100,
            base_side: 7,
            base_channels: 64,
            block_filters: vec![64, 32],
            batch_norm_momentum: 0.8,
            init_std: 0.02,
        }
    }
}

impl GeneratorSpec {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let bn = LayerSpec::BatchNorm {
            momentum: self.batch_norm_momentum,
        };
        let mut l = vec![
            LayerSpec::Dense {
                units: self.base_side * self.base_side * self.base_channels,
            },
            bn.clone(),
            LayerSpec::Relu,
            LayerSpec::Reshape {
                shape: vec![self.base_side, self.base_side, self.base_channels],
            },
        ];
        for &f in &self.block_filters {
            l.extend([
                LayerSpec::Upsample2x,
                LayerSpec::Conv {
                    filters: f,
                    stride: 1,
                },
                bn.clone(),
                LayerSpec::Relu,
            ]);
        }
        l.extend([
            LayerSpec::Conv {
                filters: 1,
                stride: 1,
            },
            LayerSpec::Tanh,
        ]);
        l
    }
}

/// Convolutional discriminator: input noise, stride-2 `(conv, relu,
/// dropout)` blocks, flatten, dense head with K+1 raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub input_noise_std: f64,
    pub filters: Vec<usize>,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            input_noise_std: 0.2,
            filters: vec![32, 64, 128],
            dropout: 0.4,
            init_std: 0.02,
        }
    }
}

impl DiscriminatorSpec {
    pub fn layers(&self, k: usize) -> Vec<LayerSpec> {
        let mut l = vec![LayerSpec::GaussianNoise {
            std: self.input_noise_std,
        }];
        for &f in &self.filters {
            l.extend([
                LayerSpec::Conv {
                    filters: f,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: self.dropout },
            ]);
        }
        l.extend([LayerSpec::Flatten, LayerSpec::Dense { units: k + 1 }]);
        l
    }
}

/// Dense-only pair for 2-D point domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpPairSpec {
    pub z_length: usize,
    pub hidden: Vec<usize>,
    pub input_dim: usize,
    pub init: WeightInit,
    /// Std of the Gaussian noise added to generated points in training
    /// mode, in input units. Zero disables the noise layer.
    pub generator_output_noise: f64,
}

impl Default for MlpPairSpec {
    fn default() -> Self {
        MlpPairSpec {
            z_length: 8,
            hidden: vec![64, 64, 64],
            input_dim: 2,
            init: WeightInit::HeNormal,
            generator_output_noise: 7.0,
        }
    }
}

impl MlpPairSpec {
    fn generator_layers(&self) -> Vec<LayerSpec> {
        let mut l = self.stack(self.input_dim);
        if self.generator_output_noise > 0.0 {
            l.push(LayerSpec::GaussianNoise {
                std: self.generator_output_noise,
            });
        }
        l
    }

    fn stack(&self, out: usize) -> Vec<LayerSpec> {
        let mut l = Vec::new();
        for &h in &self.hidden {
            l.extend([LayerSpec::Dense { units: h }, LayerSpec::Relu]);
        }
        l.push(LayerSpec::Dense { units: out });
        l
    }
}

/// Which network family a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    Cnn {
        #[serde(default)]
        generator: GeneratorSpec,
        #[serde(default)]
        discriminator: DiscriminatorSpec,
    },
    Mlp(MlpPairSpec),
}

impl Architecture {
    pub fn z_length(&self) -> usize {
        match self {
            Architecture::Cnn { generator, .. } => generator.z_length,
            Architecture::Mlp(m) => m.z_length,
        }
    }

    /// Per-sample shape of real and generated samples.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            Architecture::Cnn { .. } => vec![IMAGE_SIDE, IMAGE_SIDE, 1],
            Architecture::Mlp(m) => vec![m.input_dim],
        }
    }

    pub fn build_generator<T: Real>(&self, seed: u64) -> Result<Sequential<T>, ModelError> {
        match self {
            Architecture::Cnn { generator, .. } => build_generator(generator, seed),
            Architecture::Mlp(m) => build_mlp_generator(m, seed),
        }
    }

    pub fn build_discriminator<T: Real>(
        &self,
        k: usize,
        seed: u64,
    ) -> Result<Sequential<T>, ModelError> {
        match self {
            Architecture::Cnn { discriminator, .. } => build_discriminator(k, discriminator, seed),
            Architecture::Mlp(m) => build_mlp_discriminator(k, m, seed),
        }
    }
}

/// Builds the convolutional generator; fails if the spec does not end at
/// 28x28x1.
pub fn build_generator<T: Real>(spec: &GeneratorSpec, seed: u64) -> Result<Sequential<T>, ModelError> {
    if spec.z_length == 0 {
        return Err(ModelError::Spec("z_length must be at least 1".into()));
    }
    let net = Sequential::build(
        "generator",
        &[spec.z_length],
        &spec.layers(),
        WeightInit::Normal { std: spec.init_std },
        &mut stream_rng(seed, Stream::GeneratorInit),
        stream_rng(seed, Stream::GeneratorNoise),
    )?;
    let expected = vec![IMAGE_SIDE, IMAGE_SIDE, 1];
    if net.output_shape() != expected.as_slice() {
        return Err(ModelError::OutputShape {
            expected,
            actual: net.output_shape().to_vec(),
        });
    }
    Ok(net)
}

/// Builds the convolutional discriminator with `k + 1` output logits.
pub fn build_discriminator<T: Real>(
    k: usize,
    spec: &DiscriminatorSpec,
    seed: u64,
) -> Result<Sequential<T>, ModelError> {
    if k == 0 {
        return Err(ModelError::Spec("k must be at least 1".into()));
    }
    Ok(Sequential::build(
        "discriminator",
        &[IMAGE_SIDE, IMAGE_SIDE, 1],
        &spec.layers(k),
        WeightInit::Normal { std: spec.init_std },
        &mut stream_rng(seed, Stream::DiscriminatorInit),
        stream_rng(seed, Stream::DiscriminatorNoise),
    )?)
}

pub fn build_mlp_generator<T: Real>(spec: &MlpPairSpec, seed: u64) -> Result<Sequential<T>, ModelError> {
    if spec.z_length == 0 || spec.input_dim == 0 {
        return Err(ModelError::Spec("z_length and input_dim must be positive".into()));
    }
    Ok(Sequential::build(
        "generator",
        &[spec.z_length],
        &spec.generator_layers(),
        spec.init,
        &mut stream_rng(seed, Stream::GeneratorInit),
        stream_rng(seed, Stream::GeneratorNoise),
    )?)
}

pub fn build_mlp_discriminator<T: Real>(
    k: usize,
    spec: &MlpPairSpec,
    seed: u64,
) -> Result<Sequential<T>, ModelError> {
    if k == 0 {
        return Err(ModelError::Spec("k must be at least 1".into()));
    }
    Ok(Sequential::build(
        "discriminator",
        &[spec.input_dim],
        &spec.stack(k + 1),
        spec.init,
        &mut stream_rng(seed, Stream::DiscriminatorInit),
        stream_rng(seed, Stream::DiscriminatorNoise),
    )?)
}

/// Per-sample argmax over `(batch, K+1)` logits as 1-based system classes.
/// Ties resolve to the lowest index.
pub fn classify<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.row_len();
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best + 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn classify_rules() {
        assert_eq!(classify(&t(&[1, 3], &[0.1, 0.9, 0.3])), vec![2]);
        assert_eq!(classify(&t(&[1, 3], &[5.0, 5.0, 5.0])), vec![1]);
        assert_eq!(classify(&t(&[1, 3], &[7.4, 8.2, 7.6])), vec![2]);
    }

    #[test]
    fn discriminator_output_width() {
        for (k, width) in [(2, 3), (9, 10)] {
            let d = build_discriminator::<f32>(k, &DiscriminatorSpec::default(), 1).unwrap();
            assert_eq!(d.output_shape(), &[width]);
        }
        assert!(build_discriminator::<f32>(0, &DiscriminatorSpec::default(), 1).is_err());
    }

    #[test]
    fn head_is_the_only_k_dependent_part() {
        let a = build_discriminator::<f32>(2, &DiscriminatorSpec::default(), 1).unwrap();
        let b = build_discriminator::<f32>(5, &DiscriminatorSpec::default(), 1).unwrap();
        let diff: Vec<_> = a
            .params()
            .iter()
            .zip(b.params().iter())
            .filter(|(x, y)| x.value.shape() != y.value.shape())
            .map(|(x, _)| x.name.clone())
            .collect();
        let last = a.specs().len() - 1;
        assert_eq!(
            diff,
            vec![format!("discriminator/{last}/kernel"), format!("discriminator/{last}/bias")]
        );
        // dense head: flattened 4*4*128 inputs times (k+1) outputs plus bias
        let delta = b.params().trainable_count() - a.params().trainable_count();
        assert_eq!(delta, 3 * (4 * 4 * 128) + 3);
    }

    #[test]
    fn generator_shape_checked_at_build() {
        let bad = GeneratorSpec {
            block_filters: vec![16, 16, 16],
            ..GeneratorSpec::default()
        };
        assert!(matches!(
            build_generator::<f32>(&bad, 0),
            Err(ModelError::OutputShape { .. })
        ));
        let zero = GeneratorSpec {
            z_length: 0,
            ..GeneratorSpec::default()
        };
        assert!(build_generator::<f32>(&zero, 0).is_err());
    }

    #[test]
    fn mlp_pair_shapes() {
        let spec = MlpPairSpec::default();
        let g = build_mlp_generator::<f32>(&spec, 3).unwrap();
        let d = build_mlp_discriminator::<f32>(3, &spec, 3).unwrap();
        assert_eq!(g.output_shape(), &[2]);
        assert_eq!(d.input_shape(), &[2]);
        assert_eq!(d.output_shape(), &[4]);
    }

    proptest! {
        #[test]
        fn classify_total_and_shift_invariant(
            v in proptest::collection::vec(-1e3f64..1e3, 2..11),
            shift in -100f64..100.0,
        ) {
            let n = v.len();
            let a = classify(&t(&[1, n], &v))[0];
            prop_assert!((1..=n).contains(&a));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let b = classify(&t(&[1, n], &shifted))[0];
            // exact shift can merge near-ties through rounding; only compare
            // when the winner is clear
            let mut sorted = v.clone();
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if sorted[0] - sorted[1] > 1e-9 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
