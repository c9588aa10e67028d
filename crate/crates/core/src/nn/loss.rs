//! Cross-entropy losses computed in logit space.
//!
//! Every function returns the batch-mean loss together with its gradient
//! with respect to the logits, so callers can feed the gradient straight
//! into [`Sequential::backward`](super::Sequential::backward).

use super::{NnError, Real, Tensor};

/// Scalar loss and its gradient w.r.t. the logits it was computed from.
#[derive(Debug, Clone)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    let zero = T::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, evaluated on the side that cannot overflow.
pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Row-wise softmax of a `(batch, classes)` tensor.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Row-wise log-softmax using max subtraction.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Index of the single 1 in a one-hot row.
pub(crate) fn one_hot_index<T: Real>(row: &[T], row_index: usize) -> Result<usize, NnError> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(NnError::NotOneHot(row_index));
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(NnError::NotOneHot(row_index));
        }
    }
    hot.ok_or(NnError::NotOneHot(row_index))
}

/// Mean over the batch of `-sum_k y_k log softmax(logits)_k`.
pub fn softmax_cross_entropy_with_logits<T: Real>(
    logits: &Tensor<T>,
    onehot: &Tensor<T>,
) -> Result<Loss<T>, NnError> {
    if logits.shape() != onehot.shape() || logits.shape().len() != 2 {
        return Err(NnError::ShapeMismatch {
            expected: logits.shape().to_vec(),
            actual: onehot.shape().to_vec(),
        });
    }
    let batch = logits.rows();
    if batch == 0 {
        return Err(NnError::Empty);
    }
    let c = logits.row_len();
    let targets = (0..batch)
        .map(|r| one_hot_index(onehot.row(r), r))
        .collect::<Result<Vec<_>, _>>()?;
    softmax_cross_entropy_with_indices(logits, &targets, c)
}

/// Same loss as [`softmax_cross_entropy_with_logits`] with targets given
/// as 0-based column indices.
pub fn softmax_cross_entropy_with_indices<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    classes: usize,
) -> Result<Loss<T>, NnError> {
    let batch = logits.rows();
    if targets.len() != batch || logits.row_len() != classes {
        return Err(NnError::ShapeMismatch {
            expected: vec![targets.len(), classes],
            actual: logits.shape().to_vec(),
        });
    }
    if batch == 0 {
        return Err(NnError::Empty);
    }
    let logp = log_softmax(logits);
    let bf = T::from_usize(batch).expect("batch fits");
    let mut value = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(NnError::NotOneHot(r));
        }
        let lp = logp.row(r);
        value -= lp[t];
        let g = &mut grad.data_mut()[r * classes..(r + 1) * classes];
        for (gi, &l) in g.iter_mut().zip(lp) {
            *gi = l.exp() / bf;
        }
        g[t] -= T::one() / bf;
    }
    Ok(Loss {
        value: value / bf,
        grad,
    })
}

/// Mean of `-t log sigma(l) - (1 - t) log(1 - sigma(l))`, as
/// `softplus(l) - t * l`. Returns the gradient as a rank-1 tensor.
pub fn sigmoid_cross_entropy_with_logits<T: Real>(
    logits: &[T],
    targets: &[T],
) -> Result<Loss<T>, NnError> {
    if logits.len() != targets.len() {
        return Err(NnError::ShapeMismatch {
            expected: vec![logits.len()],
            actual: vec![targets.len()],
        });
    }
    if logits.is_empty() {
        return Err(NnError::Empty);
    }
    let n = T::from_usize(logits.len()).expect("batch fits");
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (i, (&l, &t)) in logits.iter().zip(targets).enumerate() {
        if t != T::zero() && t != T::one() {
            return Err(NnError::BadTarget(i));
        }
        value += softplus(l) - t * l;
        grad.push((sigmoid(l) - t) / n);
    }
    Ok(Loss {
        value: value / n,
        grad: Tensor::from_vec(&[logits.len()], grad)?,
    })
}
