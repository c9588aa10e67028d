//! Generator and discriminator objectives for the K+1-output GAN.
//!
//! The discriminator emits one logit vector of length K+1 per sample. The
//! supervised objective reads it through a softmax over all K+1 classes;
//! the adversarial objective reads only the last logit through a sigmoid.

use serde::{Deserialize, Serialize};

use crate::nn::{
    sigmoid, softmax_cross_entropy_with_indices, softmax_cross_entropy_with_logits, softplus,
    NnError, Real, Tensor,
};

/// The two views of one discriminator output.
#[derive(Debug, Clone)]
pub struct DiscriminatorReadout<T> {
    pub full_logits: Tensor<T>,
}

impl<T: Real> DiscriminatorReadout<T> {
    pub fn new(full_logits: Tensor<T>) -> Self {
        DiscriminatorReadout { full_logits }
    }

    /// The unknown-class column, read as a binary real/fake logit.
    pub fn k1_logits(&self) -> Vec<T> {
        k1_column(&self.full_logits)
    }
}

/// Last column of a `(batch, K+1)` logit tensor.
pub fn k1_column<T: Real>(logits: &Tensor<T>) -> Vec<T> {
    let c = logits.row_len();
    logits.column(c - 1)
}

/// Per-term weights. All default to 1, which is the unweighted objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub supervised_labelled: f64,
    pub supervised_fake: f64,
    pub gan_unlabelled: f64,
    pub gan_labelled: f64,
    pub gan_fake: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            supervised_labelled: 1.0,
            supervised_fake: 1.0,
            gan_unlabelled: 1.0,
            gan_labelled: 1.0,
            gan_fake: 1.0,
        }
    }
}

/// Generator objective flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// Minimise `E log(1 - sigma(l))` directly.
    #[default]
    Saturating,
    /// Minimise `-E log sigma(l)`: same fixed point, stronger gradient
    /// while the discriminator rejects the fakes.
    NonSaturating,
}

/// A scalar objective with the gradient w.r.t. each logit batch it read.
#[derive(Debug, Clone)]
pub struct TermLoss<T> {
    pub value: T,
    pub grad: Vec<T>,
}

/// `mean log(1 - sigma(l))` over the unknown-class logits of generated
/// samples, i.e. `-mean softplus(l)`. Minimising it pushes `sigma(l)` to 1.
pub fn generator_loss<T: Real>(k1_logits_on_fake: &[T]) -> Result<TermLoss<T>, NnError> {
    if k1_logits_on_fake.is_empty() {
        return Err(NnError::Empty);
    }
    let n = T::from_usize(k1_logits_on_fake.len()).expect("batch fits");
    let value = -k1_logits_on_fake.iter().map(|&l| softplus(l)).sum::<T>() / n;
    let grad = k1_logits_on_fake.iter().map(|&l| -sigmoid(l) / n).collect();
    Ok(TermLoss { value, grad })
}

/// `-mean log sigma(l)`, the non-saturating counterpart of
/// [`generator_loss`].
pub fn generator_loss_non_saturating<T: Real>(
    k1_logits_on_fake: &[T],
) -> Result<TermLoss<T>, NnError> {
    if k1_logits_on_fake.is_empty() {
        return Err(NnError::Empty);
    }
    let n = T::from_usize(k1_logits_on_fake.len()).expect("batch fits");
    let value = k1_logits_on_fake.iter().map(|&l| softplus(-l)).sum::<T>() / n;
    let grad = k1_logits_on_fake
        .iter()
        .map(|&l| (sigmoid(l) - T::one()) / n)
        .collect();
    Ok(TermLoss { value, grad })
}

/// Supervised K+1 objective and its parts.
#[derive(Debug, Clone)]
pub struct SupervisedLoss<T> {
    pub value: T,
    pub labelled_term: T,
    pub fake_term: T,
    /// Gradient w.r.t. the labelled `(b, K+1)` logits (weight applied).
    pub grad_labelled: Tensor<T>,
    /// Gradient w.r.t. the generated `(b, K+1)` logits (weight applied).
    pub grad_fake: Tensor<T>,
}

/// Categorical cross-entropy of labelled samples against their K+1 one-hot
/// labels plus categorical cross-entropy of generated samples against the
/// unknown class K+1.
pub fn supervised_loss<T: Real>(
    labelled_logits: &Tensor<T>,
    onehot: &Tensor<T>,
    fake_logits: &Tensor<T>,
    weights: &LossWeights,
) -> Result<SupervisedLoss<T>, NnError> {
    let classes = labelled_logits.row_len();
    if fake_logits.row_len() != classes {
        return Err(NnError::ShapeMismatch {
            expected: labelled_logits.shape().to_vec(),
            actual: fake_logits.shape().to_vec(),
        });
    }
    let lab = softmax_cross_entropy_with_logits(labelled_logits, onehot)?;
    let unknown = vec![classes - 1; fake_logits.rows()];
    let fake = softmax_cross_entropy_with_indices(fake_logits, &unknown, classes)?;
    let wl = T::from_f64_lossy(weights.supervised_labelled);
    let wf = T::from_f64_lossy(weights.supervised_fake);
    Ok(SupervisedLoss {
        value: wl * lab.value + wf * fake.value,
        labelled_term: lab.value,
        fake_term: fake.value,
        grad_labelled: lab.grad.map(|g| g * wl),
        grad_fake: fake.grad.map(|g| g * wf),
    })
}

/// Adversarial objective at the unknown-class node and its parts.
#[derive(Debug, Clone)]
pub struct GanLoss<T> {
    pub value: T,
    pub unlabelled_term: T,
    pub labelled_term: T,
    pub fake_term: T,
    pub grad_unlabelled: Vec<T>,
    pub grad_labelled: Vec<T>,
    pub grad_fake: Vec<T>,
}

/// Binary cross-entropy at the K+1 node with unlabelled samples as real
/// (target 1) and both labelled and generated samples as fake (target 0):
/// `-E log sigma(l_U) - E log(1 - sigma(l_L)) - E log(1 - sigma(l_G))`.
pub fn gan_discriminator_loss<T: Real>(
    k1_logits_unlabelled: &[T],
    k1_logits_labelled: &[T],
    k1_logits_fake: &[T],
    weights: &LossWeights,
) -> Result<GanLoss<T>, NnError> {
    fn term<T: Real>(logits: &[T], real: bool, w: T) -> Result<(T, Vec<T>), NnError> {
        if logits.is_empty() {
            return Err(NnError::Empty);
        }
        let n = T::from_usize(logits.len()).expect("batch fits");
        let one = T::one();
        let (value, grad) = if real {
            (
                logits.iter().map(|&l| softplus(-l)).sum::<T>() / n,
                logits.iter().map(|&l| w * (sigmoid(l) - one) / n).collect(),
            )
        } else {
            (
                logits.iter().map(|&l| softplus(l)).sum::<T>() / n,
                logits.iter().map(|&l| w * sigmoid(l) / n).collect(),
            )
        };
        Ok((value, grad))
    }
    let wu = T::from_f64_lossy(weights.gan_unlabelled);
    let wl = T::from_f64_lossy(weights.gan_labelled);
    let wf = T::from_f64_lossy(weights.gan_fake);
    let (u, gu) = term(k1_logits_unlabelled, true, wu)?;
    let (l, gl) = term(k1_logits_labelled, false, wl)?;
    let (f, gf) = term(k1_logits_fake, false, wf)?;
    Ok(GanLoss {
        value: wu * u + wl * l + wf * f,
        unlabelled_term: u,
        labelled_term: l,
        fake_term: f,
        grad_unlabelled: gu,
        grad_labelled: gl,
        grad_fake: gf,
    })
}

/// The full discriminator objective: supervised plus adversarial, unweighted.
pub fn total_discriminator_loss<T: Real>(supervised: T, gan: T) -> T {
    supervised + gan
}
