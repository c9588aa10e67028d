//! Six isotropic Gaussian blobs in the plane: three known, three that only
//! appear unlabelled, plus open-set probe points far from all of them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LabelledSet, SsLacSplit};
use crate::nn::Tensor;
use crate::seeding::{stream_rng, Stream};

pub const BLOB_COUNT: usize = 6;
/// Blob ids whose samples are labelled.
pub const KNOWN_BLOBS: [u8; 3] = [0, 2, 4];

const RADIUS: f64 = 4.0;
const SPREAD: f64 = 0.5;
/// Minimum probe distance from every center, in spreads.
const PROBE_CLEARANCE: f64 = 6.0;
/// Half-width of the square frame holding the blobs and the probes.
pub const PROBE_EXTENT: f64 = 10.0;
const VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub blob_centers: Vec<[f64; 2]>,
    pub blob_spreads: Vec<f64>,
    pub known_ids: Vec<u8>,
    /// `(count, 2)` points at least six spreads from every center.
    pub open_probe_points: Tensor<f32>,
    pub samples_per_blob: usize,
    pub seed: u64,
}

impl SyntheticDomain {
    /// Square `[-extent, extent]^2` covering the blobs and the probes.
    pub fn extent(&self) -> f64 {
        PROBE_EXTENT
    }

    /// Test points: `samples_per_blob` fresh draws from each of the six blobs,
    /// with their blob ids.
    pub fn test_points(&self) -> (Tensor<f32>, Vec<u8>) {
        let mut rng = stream_rng(self.seed, Stream::DomainTest);
        let ids: Vec<u8> = (0..BLOB_COUNT as u8).collect();
        self.draw(&mut rng, &ids, self.samples_per_blob)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, blobs: &[u8], per_blob: usize) -> (Tensor<f32>, Vec<u8>) {
        let mut data = Vec::with_capacity(blobs.len() * per_blob * 2);
        let mut ids = Vec::with_capacity(blobs.len() * per_blob);
        for &b in blobs {
            let [cx, cy] = self.blob_centers[b as usize];
            let s = self.blob_spreads[b as usize];
            for _ in 0..per_blob {
                let dx: f64 = StandardNormal.sample(rng);
                let dy: f64 = StandardNormal.sample(rng);
                data.push((cx + s * dx) as f32);
                data.push((cy + s * dy) as f32);
                ids.push(b);
            }
        }
        (Tensor::from_vec(&[ids.len(), 2], data).expect("sizes agree"), ids)
    }
}

fn labelled(samples: Tensor<f32>, ids: Vec<u8>, known: &[u8]) -> LabelledSet {
    LabelledSet {
        classes: ids.iter().map(|&b| super::system_class(b, known)).collect(),
        original: ids,
        samples,
    }
}

/// Builds the domain and its materialised split. Known blobs contribute
/// `samples_per_blob` labelled points (a fifth held out for fair
/// validation) plus `samples_per_blob` unlabelled points; the other blobs
/// contribute unlabelled points only.
///
/// # Panics
/// If `samples_per_blob < 20`.
pub fn make_dummy_domain(seed: u64, samples_per_blob: usize) -> (SyntheticDomain, SsLacSplit) {
    assert!(samples_per_blob >= 20, "samples_per_blob must be at least 20");
    let blob_centers: Vec<[f64; 2]> = (0..BLOB_COUNT)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / BLOB_COUNT as f64;
            [RADIUS * a.cos(), RADIUS * a.sin()]
        })
        .collect();

    let mut probe_rng = stream_rng(seed, Stream::Probes);
    let n_probes = samples_per_blob * 2;
    let mut probes = Vec::with_capacity(n_probes * 2);
    while probes.len() < n_probes * 2 {
        let x = probe_rng.random_range(-PROBE_EXTENT..PROBE_EXTENT);
        let y = probe_rng.random_range(-PROBE_EXTENT..PROBE_EXTENT);
        let clear = blob_centers
            .iter()
            .all(|&[cx, cy]| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() >= PROBE_CLEARANCE * SPREAD);
        if clear {
            probes.push(x as f32);
            probes.push(y as f32);
        }
    }

    let domain = SyntheticDomain {
        blob_centers,
        blob_spreads: vec![SPREAD; BLOB_COUNT],
        known_ids: KNOWN_BLOBS.to_vec(),
        open_probe_points: Tensor::from_vec(&[n_probes, 2], probes).expect("sizes agree"),
        samples_per_blob,
        seed,
    };

    let mut rng = stream_rng(seed, Stream::Domain);
    let known = &domain.known_ids;
    let (lab_x, lab_ids) = domain.draw(&mut rng, known, samples_per_blob);
    let n_val = (samples_per_blob as f64 * VAL_FRACTION).round() as usize;
    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for b in 0..known.len() {
        let base = b * samples_per_blob;
        val_rows.extend(base..base + n_val);
        train_rows.extend(base + n_val..base + samples_per_blob);
    }
    let all_ids: Vec<u8> = (0..BLOB_COUNT as u8).collect();
    let (unl_x, unl_ids) = domain.draw(&mut rng, &all_ids, samples_per_blob);
    let (test_x, test_ids) = domain.test_points();

    let pick = |rows: &[usize]| rows.iter().map(|&r| lab_ids[r]).collect::<Vec<u8>>();
    let split = SsLacSplit::new(
        known.clone(),
        labelled(lab_x.select_rows(&train_rows), pick(&train_rows), known),
        unl_x,
        unl_ids,
        labelled(lab_x.select_rows(&val_rows), pick(&val_rows), known),
        labelled(test_x, test_ids, known),
    );
    (domain, split)
}
