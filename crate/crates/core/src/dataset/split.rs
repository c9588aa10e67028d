use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{DatasetError, ImageSet};
use crate::nn::Tensor;
use crate::seeding::{stream_rng, Stream};

/// Number of classes in the MNIST family.
pub const ORIGINAL_CLASSES: usize = 10;

/// How many unlabelled samples to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabelledCount {
    /// This many from every original class.
    PerClass(usize),
    /// This many in total, spread evenly over the classes (remainder to the
    /// lowest class ids).
    Total(usize),
}

impl UnlabelledCount {
    fn for_class(&self, class: usize) -> usize {
        match *self {
            UnlabelledCount::PerClass(n) => n,
            UnlabelledCount::Total(n) => {
                n / ORIGINAL_CLASSES + usize::from(class < n % ORIGINAL_CLASSES)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub k: usize,
    pub seed: u64,
    /// Labelled samples per known class, before the validation carve-out.
    pub labelled_per_class: usize,
    pub unlabelled: UnlabelledCount,
    pub val_fraction: f64,
}

impl SplitParams {
    /// 1400 labelled per known class, 4000 unlabelled per class, a fifth
    /// of the labelled data held out for fair validation.
    pub fn mnist(k: usize, seed: u64) -> Self {
        SplitParams {
            k,
            seed,
            labelled_per_class: 1400,
            unlabelled: UnlabelledCount::PerClass(4000),
            val_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(1..ORIGINAL_CLASSES).contains(&self.k) {
            return Err(DatasetError::BadK(self.k));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(DatasetError::Invalid(format!(
                "val_fraction {} must lie strictly between 0 and 1",
                self.val_fraction
            )));
        }
        let v = self.validation_per_class();
        if v == 0 || v >= self.labelled_per_class {
            return Err(DatasetError::Invalid(format!(
                "{} labelled per class with val_fraction {} leaves an empty partition",
                self.labelled_per_class, self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn validation_per_class(&self) -> usize {
        (self.labelled_per_class as f64 * self.val_fraction).round() as usize
    }
}

/// Index-level description of a split; what the split manifest stores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    /// Known original classes, ascending; position `i` is system class `i+1`.
    pub known_classes: Vec<u8>,
    pub labelled: Vec<usize>,
    pub fair_validation: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

impl SplitIndices {
    pub fn k(&self) -> usize {
        self.known_classes.len()
    }
}

/// System class (1-based) of an original class: its rank among the known
/// classes, or `K+1` when it is not known.
pub fn system_class(original: u8, known_classes: &[u8]) -> usize {
    known_classes
        .iter()
        .position(|&c| c == original)
        .map_or(known_classes.len() + 1, |p| p + 1)
}

/// Draws the known classes and partitions `train_labels` into labelled,
/// fair-validation and unlabelled index sets.
pub fn build_sslac_split(train_labels: &[u8], params: &SplitParams) -> Result<SplitIndices, DatasetError> {
    params.validate()?;
    let mut rng = stream_rng(params.seed, Stream::Split);
    let mut known: Vec<u8> = index::sample(&mut rng, ORIGINAL_CLASSES, params.k)
        .into_iter()
        .map(|c| c as u8)
        .collect();
    known.sort_unstable();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ORIGINAL_CLASSES];
    for (i, &l) in train_labels.iter().enumerate() {
        let l = l as usize;
        if l >= ORIGINAL_CLASSES {
            return Err(DatasetError::Invalid(format!("label {l} at index {i} outside 0..=9")));
        }
        by_class[l].push(i);
    }

    let n_val = params.validation_per_class();
    let mut out = SplitIndices {
        seed: params.seed,
        known_classes: known.clone(),
        labelled: Vec::new(),
        fair_validation: Vec::new(),
        unlabelled: Vec::new(),
    };
    for (class, pool) in by_class.iter_mut().enumerate() {
        pool.shuffle(&mut rng);
        let is_known = known.contains(&(class as u8));
        let n_lab = if is_known { params.labelled_per_class } else { 0 };
        let n_unl = params.unlabelled.for_class(class);
        let needed = n_lab + n_unl;
        if pool.len() < needed {
            return Err(DatasetError::InsufficientSamples {
                class: class as u8,
                needed,
                available: pool.len(),
            });
        }
        if is_known {
            out.fair_validation.extend_from_slice(&pool[..n_val]);
            out.labelled.extend_from_slice(&pool[n_val..n_lab]);
        }
        out.unlabelled.extend_from_slice(&pool[n_lab..needed]);
    }
    Ok(out)
}

/// Samples with their system classes (and original classes for reporting).
#[derive(Debug, Clone)]
pub struct LabelledSet {
    pub samples: Tensor<f32>,
    /// 1-based system classes.
    pub classes: Vec<usize>,
    pub original: Vec<u8>,
}

impl LabelledSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Materialised four-way partition ready for training.
///
/// The test partition is only reachable through [`SsLacSplit::test`], which
/// counts its callers so tests can assert training never looked at it.
#[derive(Debug)]
pub struct SsLacSplit {
    pub k: usize,
    pub known_classes: Vec<u8>,
    pub labelled: LabelledSet,
    pub unlabelled: Tensor<f32>,
    pub unlabelled_original: Vec<u8>,
    pub fair_validation: LabelledSet,
    test: LabelledSet,
    test_reads: AtomicUsize,
}

impl SsLacSplit {
    pub fn new(
        known_classes: Vec<u8>,
        labelled: LabelledSet,
        unlabelled: Tensor<f32>,
        unlabelled_original: Vec<u8>,
        fair_validation: LabelledSet,
        test: LabelledSet,
    ) -> Self {
        SsLacSplit {
            k: known_classes.len(),
            known_classes,
            labelled,
            unlabelled,
            unlabelled_original,
            fair_validation,
            test,
            test_reads: AtomicUsize::new(0),
        }
    }

    /// Builds the split from image sets and a precomputed index split. The
    /// test partition is the whole `test_set`.
    pub fn from_images(
        train_set: &ImageSet,
        test_set: &ImageSet,
        indices: &SplitIndices,
    ) -> Result<Self, DatasetError> {
        let train_labels = train_set
            .labels
            .as_ref()
            .ok_or_else(|| DatasetError::Invalid("training set has no labels".into()))?;
        let test_labels = test_set
            .labels
            .as_ref()
            .ok_or_else(|| DatasetError::Invalid("test set has no labels".into()))?;
        if train_set.sample_shape() != test_set.sample_shape() {
            return Err(DatasetError::Invalid("train and test image shapes differ".into()));
        }
        let known = &indices.known_classes;
        let all = [&indices.labelled, &indices.fair_validation, &indices.unlabelled];
        if let Some(&bad) = all.iter().flat_map(|v| v.iter()).find(|&&i| i >= train_set.count) {
            return Err(DatasetError::Invalid(format!(
                "split index {bad} outside the {}-sample training set",
                train_set.count
            )));
        }
        let labelled_set = |idx: &[usize], labels: &[u8], set: &ImageSet| LabelledSet {
            samples: set.normalized(idx),
            classes: idx.iter().map(|&i| system_class(labels[i], known)).collect(),
            original: idx.iter().map(|&i| labels[i]).collect(),
        };
        let test_idx: Vec<usize> = (0..test_set.count).collect();
        Ok(SsLacSplit::new(
            known.clone(),
            labelled_set(&indices.labelled, train_labels, train_set),
            train_set.normalized(&indices.unlabelled),
            indices.unlabelled.iter().map(|&i| train_labels[i]).collect(),
            labelled_set(&indices.fair_validation, train_labels, train_set),
            labelled_set(&test_idx, test_labels, test_set),
        ))
    }

    /// The held-out test partition.
    pub fn test(&self) -> &LabelledSet {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        &self.test
    }

    /// How many times [`SsLacSplit::test`] has been called.
    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::Relaxed)
    }

    pub fn unknown_class(&self) -> usize {
        self.k + 1
    }
}
