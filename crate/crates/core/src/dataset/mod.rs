//! Dataset ingestion, SsLAC partitioning and the synthetic blob domain.

mod idx;
mod split;
mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::nn::{Real, Tensor};

pub use idx::{parse_idx, IdxArray, TYPE_U8};
pub use split::{
    build_sslac_split, system_class, LabelledSet, SplitIndices, SplitParams, SsLacSplit,
    UnlabelledCount, ORIGINAL_CLASSES,
};
pub use synthetic::{make_dummy_domain, SyntheticDomain, BLOB_COUNT, KNOWN_BLOBS, PROBE_EXTENT};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("IDX error at byte {offset}: {reason}")]
    Idx { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("class {class} has {available} samples, {needed} needed")]
    InsufficientSamples {
        class: u8,
        needed: usize,
        available: usize,
    },
    #[error("k = {0} is outside 1..=9")]
    BadK(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Raw 8-bit images `(count, height, width, channels)` with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub labels: Option<Vec<u8>>,
}

impl ImageSet {
    /// Wraps an IDX image array of rank 3 `(n, h, w)` or 4 `(n, h, w, c)`
    /// and an optional rank-1 label array.
    pub fn from_idx(images: IdxArray, labels: Option<IdxArray>) -> Result<Self, DatasetError> {
        let (count, height, width, channels) = match images.shape.as_slice() {
            &[n, h, w] => (n, h, w, 1),
            &[n, h, w, c] => (n, h, w, c),
            s => {
                return Err(DatasetError::Invalid(format!(
                    "image array must have rank 3 or 4, got {s:?}"
                )))
            }
        };
        let labels = match labels {
            Some(l) => {
                if l.shape != [count] {
                    return Err(DatasetError::Invalid(format!(
                        "{} images but label shape {:?}",
                        count, l.shape
                    )));
                }
                Some(l.data)
            }
            None => None,
        };
        Ok(ImageSet {
            count,
            height,
            width,
            channels,
            pixels: images.data,
            labels,
        })
    }

    /// Reads an image IDX file and an optional label IDX file.
    pub fn load(images: &Path, labels: Option<&Path>) -> Result<Self, DatasetError> {
        let img = parse_idx(&read_file(images)?)?;
        let lab = labels.map(|p| read_file(p).and_then(|b| parse_idx(&b))).transpose()?;
        Self::from_idx(img, lab)
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Normalised `(count, h, w, c)` tensor of the selected samples.
    pub fn normalized<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        let per = self.height * self.width * self.channels;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.pixels[i * per..(i + 1) * per].iter().map(|&p| normalize_pixel::<T>(p)));
        }
        Tensor::from_vec(&[indices.len(), self.height, self.width, self.channels], data)
            .expect("sizes agree")
    }

    pub fn all_normalized<T: Real>(&self) -> Tensor<T> {
        let idx: Vec<usize> = (0..self.count).collect();
        self.normalized(&idx)
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Affine map of a pixel in `[0, 255]` to `[-1, 1]`.
pub fn normalize_pixel<T: Real>(p: u8) -> T {
    T::from_f64_lossy(p as f64 / 127.5 - 1.0)
}

/// Element-wise [`normalize_pixel`] over an integer-valued array.
pub fn normalize<T: Real>(shape: &[usize], pixels: &[u8]) -> Tensor<T> {
    Tensor::from_vec(shape, pixels.iter().map(|&p| normalize_pixel(p)).collect())
        .expect("pixel count matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_pixel::<f64>(0), -1.0);
        assert_eq!(normalize_pixel::<f64>(255), 1.0);
        let mid = normalize_pixel::<f64>(128);
        assert!((mid - 0.003921568).abs() < 1e-8);
        let t = normalize::<f32>(&[1, 3], &[0, 128, 255]);
        assert_eq!(t.shape(), &[1, 3]);
    }

    #[test]
    fn image_set_from_idx() {
        let img = IdxArray::new(vec![2, 2, 2], vec![0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        let lab = IdxArray::new(vec![2], vec![3, 9]).unwrap();
        let s = ImageSet::from_idx(img.clone(), Some(lab)).unwrap();
        assert_eq!((s.count, s.channels), (2, 1));
        let bad = IdxArray::new(vec![3], vec![1, 2, 3]).unwrap();
        assert!(ImageSet::from_idx(img, Some(bad)).is_err());
    }
}
