//! Metrics over system classes `1..=K+1` and the decision-boundary raster.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabelledSet, SsLacSplit};
use crate::models::classify;
use crate::nn::{NnError, Sequential, Tensor};

/// Rows per inference chunk.
const PREDICT_CHUNK: usize = 256;
const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} outside 1..={classes}")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("model expects input {expected:?}, samples have {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("boundary raster needs a 2-D input model, this one takes {0:?}")]
    NotPlanar(Vec<usize>),
    #[error("resolution {0} is below {MIN_RESOLUTION}")]
    Resolution(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Square count matrix; `counts[i][j]` is the number of samples of true
/// class `i + 1` predicted as `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Count for 1-based `(truth, prediction)`.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth - 1][predicted - 1]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth - 1].iter().sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|r| r[predicted - 1]).sum()
    }

    /// Recall of one class, `None` when it has no true samples.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.row_sum(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }

    /// Fraction of all samples on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        let hit: u64 = (1..=self.classes()).map(|c| self.get(c, c)).sum();
        (n > 0).then(|| hit as f64 / n as f64)
    }
}

pub fn confusion_matrix(
    predictions: &[usize],
    truths: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for c in [p, t] {
            if c == 0 || c > classes {
                return Err(EvalError::ClassOutOfRange { class: c, classes });
            }
        }
        counts[t - 1][p - 1] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Per-class `2PR / (P + R)`. A class whose precision or recall is
/// undefined, or whose true positives are zero, scores 0.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (1..=cm.classes())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted = cm.column_sum(c) as f64;
            let actual = cm.row_sum(c) as f64;
            if tp == 0.0 {
                return 0.0;
            }
            let p = tp / predicted;
            let r = tp / actual;
            2.0 * p * r / (p + r)
        })
        .collect()
}

/// Unweighted mean of [`per_class_f1`] over every class.
pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.classes() == 0 || cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let f = per_class_f1(cm);
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// Inference-mode predictions (1-based system classes) for `(n, ...)` samples.
pub fn predict(model: &mut Sequential<f32>, samples: &Tensor<f32>) -> Result<Vec<usize>, EvalError> {
    if samples.shape().get(1..) != Some(model.input_shape()) {
        return Err(EvalError::InputShape {
            expected: model.input_shape().to_vec(),
            actual: samples.shape().get(1..).unwrap_or(&[]).to_vec(),
        });
    }
    let n = samples.rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + PREDICT_CHUNK).min(n);
        let logits = model.forward(&samples.slice_rows(start, end), false)?;
        out.extend(classify(&logits));
        start = end;
    }
    Ok(out)
}

/// Fraction of foreign samples predicted as the unknown class `k + 1`.
pub fn open_set_accuracy(
    model: &mut Sequential<f32>,
    foreign: &Tensor<f32>,
    k: usize,
) -> Result<f64, EvalError> {
    if foreign.rows() == 0 {
        return Err(EvalError::Empty);
    }
    let p = predict(model, foreign)?;
    Ok(p.iter().filter(|&&c| c == k + 1).count() as f64 / p.len() as f64)
}

/// Fraction of samples classified as their true known class; an unknown
/// class prediction is wrong.
pub fn fair_validation_accuracy(
    model: &mut Sequential<f32>,
    validation: &LabelledSet,
) -> Result<f64, EvalError> {
    if validation.is_empty() {
        return Err(EvalError::Empty);
    }
    let p = predict(model, &validation.samples)?;
    let hits = p.iter().zip(&validation.classes).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Full evaluation of a trained discriminator: K+1 metrics on the test
/// partition and the unknown-class rate on each named foreign set.
pub fn evaluate(
    model: &mut Sequential<f32>,
    split: &SsLacSplit,
    foreign: &[(String, Tensor<f32>)],
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let k = split.k;
    let fair = fair_validation_accuracy(model, &split.fair_validation)?;
    let test = split.test();
    let preds = predict(model, &test.samples)?;
    let confusion = confusion_matrix(&preds, &test.classes, k + 1)?;
    let mut open = BTreeMap::new();
    for (name, samples) in foreign {
        open.insert(name.clone(), open_set_accuracy(model, samples, k)?);
    }
    let mut novel: Vec<u8> = split
        .unlabelled_original
        .iter()
        .copied()
        .filter(|c| !split.known_classes.contains(c))
        .collect();
    novel.sort_unstable();
    novel.dedup();
    Ok(EvalReport {
        k,
        seed,
        known_classes: split.known_classes.clone(),
        novel_train_classes: novel.len(),
        open_sets: foreign.len(),
        f1_macro: f1_macro(&confusion)?,
        per_class_f1: per_class_f1(&confusion),
        confusion,
        fair_validation_accuracy: fair,
        open_set_accuracy: open,
    })
}

/// Axis-aligned rectangle in the input plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half_width: f64) -> Self {
        Bounds {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }
}

/// Class grid over a rectangle. Row 0 is the top edge (largest y).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub resolution: usize,
    pub k: usize,
    pub cells: Vec<usize>,
}

/// Fixed colours for known classes; blue is kept for the unknown class.
const PALETTE: [[u8; 3]; 9] = [
    [220, 40, 40],
    [40, 170, 60],
    [245, 150, 20],
    [150, 60, 170],
    [230, 210, 40],
    [30, 190, 190],
    [220, 80, 170],
    [130, 90, 50],
    [130, 130, 130],
];
pub const UNKNOWN_COLOUR: [u8; 3] = [30, 70, 220];

impl Raster {
    pub fn cell(&self, row: usize, col: usize) -> usize {
        self.cells[row * self.resolution + col]
    }

    /// Cell containing the point, clamped to the frame.
    pub fn cell_at(&self, bounds: &Bounds, x: f64, y: f64) -> usize {
        let r = self.resolution as f64;
        let col = ((x - bounds.x_min) / (bounds.x_max - bounds.x_min) * r).floor();
        let row = ((bounds.y_max - y) / (bounds.y_max - bounds.y_min) * r).floor();
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.resolution - 1);
        self.cell(clamp(row), clamp(col))
    }

    /// Cells holding a class outside `1..=K+1`; zero for any raster built
    /// by [`boundary_raster`].
    pub fn unrepresented(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 0 || c > self.k + 1).count()
    }

    /// The frame's outermost cells.
    pub fn border(&self) -> Vec<usize> {
        let n = self.resolution;
        (0..n)
            .flat_map(|i| [self.cell(0, i), self.cell(n - 1, i), self.cell(i, 0), self.cell(i, n - 1)])
            .collect()
    }

    /// One line per row, space-separated class numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.cells.len() * 2);
        for row in self.cells.chunks(self.resolution) {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn colour(&self, class: usize) -> [u8; 3] {
        if class == self.k + 1 {
            UNKNOWN_COLOUR
        } else {
            PALETTE[(class - 1) % PALETTE.len()]
        }
    }

    /// Binary PPM (P6), one pixel per cell.
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.resolution;
        let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
        for &c in &self.cells {
            out.extend_from_slice(&self.colour(c));
        }
        out
    }
}

/// Classifies the centre of every cell of a `resolution x resolution` grid.
pub fn boundary_raster(
    model: &mut Sequential<f32>,
    bounds: &Bounds,
    resolution: usize,
) -> Result<Raster, EvalError> {
    if model.input_shape() != [2] {
        return Err(EvalError::NotPlanar(model.input_shape().to_vec()));
    }
    if resolution < MIN_RESOLUTION {
        return Err(EvalError::Resolution(resolution));
    }
    let k = model.output_shape()[0] - 1;
    let dx = (bounds.x_max - bounds.x_min) / resolution as f64;
    let dy = (bounds.y_max - bounds.y_min) / resolution as f64;
    let mut pts = Vec::with_capacity(resolution * resolution * 2);
    for row in 0..resolution {
        let y = bounds.y_max - (row as f64 + 0.5) * dy;
        for col in 0..resolution {
            pts.push((bounds.x_min + (col as f64 + 0.5) * dx) as f32);
            pts.push(y as f32);
        }
    }
    let grid = Tensor::from_vec(&[resolution * resolution, 2], pts)?;
    Ok(Raster {
        resolution,
        k,
        cells: predict(model, &grid)?,
    })
}

/// Metrics for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub known_classes: Vec<u8>,
    /// Novel classes present in the unlabelled training data.
    pub novel_train_classes: usize,
    /// Foreign datasets fed at test time.
    pub open_sets: usize,
    pub f1_macro: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub fair_validation_accuracy: f64,
    pub open_set_accuracy: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k = {}  seed = {}  known = {:?}", self.k, self.seed, self.known_classes);
        let _ = writeln!(s, "f1-macro               {:.4}", self.f1_macro);
        for (i, f) in self.per_class_f1.iter().enumerate() {
            let _ = writeln!(s, "  class {:<3}            {:.4}", i + 1, f);
        }
        let _ = writeln!(s, "fair validation acc    {:.4}", self.fair_validation_accuracy);
        for (name, acc) in &self.open_set_accuracy {
            let _ = writeln!(s, "open set [{name}]  {acc:.4}");
        }
        let _ = writeln!(s, "confusion (rows = truth):");
        for row in &self.confusion.counts {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(s, "{}", cells.join(""));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_confusion() {
        let cm = confusion_matrix(&[1, 2, 2, 3], &[1, 1, 2, 3], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let f = f1_macro(&cm).unwrap();
        assert!((f - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_predictor() {
        let truths: Vec<usize> = (0..30).map(|i| i / 10 + 1).collect();
        let cm = confusion_matrix(&[1; 30], &truths, 3).unwrap();
        assert!((f1_macro(&cm).unwrap() - 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_and_empty() {
        assert!(matches!(
            confusion_matrix(&[4], &[1], 3),
            Err(EvalError::ClassOutOfRange { class: 4, .. })
        ));
        assert!(confusion_matrix(&[0], &[1], 3).is_err());
        assert!(confusion_matrix(&[1, 1], &[1], 3).is_err());
        let empty = confusion_matrix(&[], &[], 3).unwrap();
        assert!(matches!(f1_macro(&empty), Err(EvalError::Empty)));
    }

    #[test]
    fn raster_text_and_ppm() {
        let r = Raster {
            resolution: 2,
            k: 1,
            cells: vec![1, 2, 2, 2],
        };
        assert_eq!(r.to_text(), "1 2\n2 2\n");
        let ppm = r.to_ppm();
        assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 12);
        assert_eq!(&ppm[14..17], &UNKNOWN_COLOUR);
        assert_eq!(r.unrepresented(), 0);
        let b = Bounds::square(1.0);
        assert_eq!(r.cell_at(&b, -0.5, 0.5), 1);
        assert_eq!(r.cell_at(&b, 5.0, -5.0), 2);
    }
}
