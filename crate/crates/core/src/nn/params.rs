use std::collections::HashSet;

use super::{NnError, Real, Tensor};

/// One named parameter array with its gradient and adaptive-moment state.
///
/// Non-trainable entries (batch-norm running statistics) live here too so
/// that checkpoints capture the full inference state; the optimizer skips
/// them.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
    first_moment: Tensor<T>,
    second_moment: Tensor<T>,
}

impl<T: Real> Param<T> {
    fn new(name: String, value: Tensor<T>, trainable: bool) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Param {
            name,
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            trainable,
        }
    }
}

/// Ordered collection of uniquely named parameters for one network.
#[derive(Debug, Clone, Default)]
pub struct ModelParams<T> {
    entries: Vec<Param<T>>,
    /// Number of optimizer steps taken.
    steps: u64,
    /// Set once any backward pass has written gradients.
    has_grads: bool,
}

/// Handle to an entry of a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams {
            entries: Vec::new(),
            steps: 0,
            has_grads: false,
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.entries.push(Param::new(name, value, trainable));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    pub(crate) fn mark_grads(&mut self) {
        self.has_grads = true;
    }

    pub fn has_grads(&self) -> bool {
        self.has_grads
    }

    /// Copies every value (trainable or not) from `other`, which must have
    /// identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ModelParams<T>) -> Result<(), NnError> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::ParamLayout(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NnError::ParamLayout(format!(
                    "{} {:?} vs {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Replaces the value of the named entry, checking the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<(), NnError> {
        let p = self
            .entries
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| NnError::ParamLayout(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(NnError::ShapeMismatch {
                expected: p.value.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn check_unique(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|p| seen.insert(p.name.as_str()))
    }
}

/// Adaptive-moment optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            ..Adam::default()
        }
    }

    /// Applies one bias-corrected update to every trainable entry.
    /// Gradients are left in place; callers clear them.
    pub fn step<T: Real>(&self, params: &mut ModelParams<T>) -> Result<(), NnError> {
        if !params.has_grads {
            return Err(NnError::NoGradients);
        }
        params.steps += 1;
        let t = params.steps as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let lr = T::from_f64_lossy(self.learning_rate);
        let eps = T::from_f64_lossy(self.epsilon);
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for p in params.entries.iter_mut().filter(|p| p.trainable) {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            let m = p.first_moment.data();
            let v = p.second_moment.data();
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
