//! Python bindings: losses, metrics, IDX parsing, the planar blob domain,
//! training, checkpoints, boundary rasters and the command line.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use open_sslac::dataset::{self, SsLacSplit, SyntheticDomain};
use open_sslac::eval::{self, Bounds};
use open_sslac::losses::{self, LossWeights};
use open_sslac::nn::{Checkpoint, Sequential, Tensor};
use open_sslac::trainer::{self, TrainOutcome};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Tensor::from_vec(&[rows.len(), width], rows.concat()).map_err(value_err)
}

fn points(rows: &[[f64; 2]]) -> PyResult<Tensor<f32>> {
    let data = rows.iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect();
    Tensor::from_vec(&[rows.len(), 2], data).map_err(value_err)
}

fn to_points(t: &Tensor<f32>) -> Vec<[f64; 2]> {
    t.data().chunks(2).map(|p| [p[0] as f64, p[1] as f64]).collect()
}

/// Mean of `log(1 - sigmoid(l))` over the unknown-class logits of fakes.
#[pyfunction]
fn generator_loss(k1_logits_on_fake: Vec<f64>) -> PyResult<f64> {
    Ok(losses::generator_loss(&k1_logits_on_fake).map_err(value_err)?.value)
}

/// Returns `(value, labelled_term, fake_term)`.
#[pyfunction]
fn supervised_loss(
    labelled_logits: Vec<Vec<f64>>,
    onehot: Vec<Vec<f64>>,
    fake_logits: Vec<Vec<f64>>,
) -> PyResult<(f64, f64, f64)> {
    let s = losses::supervised_loss(
        &matrix(&labelled_logits)?,
        &matrix(&onehot)?,
        &matrix(&fake_logits)?,
        &LossWeights::default(),
    )
    .map_err(value_err)?;
    Ok((s.value, s.labelled_term, s.fake_term))
}

#[pyfunction]
fn gan_discriminator_loss(unlabelled: Vec<f64>, labelled: Vec<f64>, fake: Vec<f64>) -> PyResult<f64> {
    let g = losses::gan_discriminator_loss(&unlabelled, &labelled, &fake, &LossWeights::default())
        .map_err(value_err)?;
    Ok(g.value)
}

#[pyfunction]
fn total_discriminator_loss(supervised: f64, gan: f64) -> f64 {
    losses::total_discriminator_loss(supervised, gan)
}

/// `counts[truth - 1][predicted - 1]` for 1-based classes.
#[pyfunction]
fn confusion_matrix(predictions: Vec<usize>, truths: Vec<usize>, classes: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(eval::confusion_matrix(&predictions, &truths, classes)
        .map_err(value_err)?
        .counts)
}

#[pyfunction]
fn per_class_f1(predictions: Vec<usize>, truths: Vec<usize>, classes: usize) -> PyResult<Vec<f64>> {
    let cm = eval::confusion_matrix(&predictions, &truths, classes).map_err(value_err)?;
    Ok(eval::per_class_f1(&cm))
}

#[pyfunction]
fn f1_macro(predictions: Vec<usize>, truths: Vec<usize>, classes: usize) -> PyResult<f64> {
    let cm = eval::confusion_matrix(&predictions, &truths, classes).map_err(value_err)?;
    eval::f1_macro(&cm).map_err(value_err)
}

/// Parses an IDX file image; returns `(shape, data)`.
#[pyfunction]
fn parse_idx<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(Vec<usize>, Bound<'py, PyBytes>)> {
    let a = dataset::parse_idx(data).map_err(value_err)?;
    Ok((a.shape.clone(), PyBytes::new(py, &a.data)))
}

/// Six Gaussian blobs in the plane: three known, three novel in the
/// unlabelled data, plus open probe points far from all of them.
#[pyclass(module = "open_sslac")]
struct DummyDomain {
    domain: SyntheticDomain,
    split: SsLacSplit,
}

#[pymethods]
impl DummyDomain {
    #[new]
    #[pyo3(signature = (seed, samples_per_blob = 500))]
    fn new(seed: u64, samples_per_blob: usize) -> PyResult<Self> {
        if samples_per_blob < 20 {
            return Err(PyValueError::new_err("samples_per_blob must be at least 20"));
        }
        let (domain, split) = dataset::make_dummy_domain(seed, samples_per_blob);
        Ok(DummyDomain { domain, split })
    }

    #[getter]
    fn k(&self) -> usize {
        self.split.k
    }

    #[getter]
    fn known_ids(&self) -> Vec<u8> {
        self.domain.known_ids.clone()
    }

    #[getter]
    fn blob_centers(&self) -> Vec<[f64; 2]> {
        self.domain.blob_centers.clone()
    }

    #[getter]
    fn extent(&self) -> f64 {
        self.domain.extent()
    }

    #[getter]
    fn open_probe_points(&self) -> Vec<[f64; 2]> {
        to_points(&self.domain.open_probe_points)
    }

    /// `(points, system_classes)` of the test partition.
    fn test_set(&self) -> (Vec<[f64; 2]>, Vec<usize>) {
        let t = self.split.test();
        (to_points(&t.samples), t.classes.clone())
    }

    fn sizes(&self) -> (usize, usize, usize) {
        (
            self.split.labelled.len(),
            self.split.fair_validation.len(),
            self.split.unlabelled.rows(),
        )
    }
}

/// Training hyperparameters.
#[pyclass(module = "open_sslac", skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: trainer::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    #[staticmethod]
    fn dummy(seed: u64) -> Self {
        TrainConfig {
            inner: trainer::TrainConfig::dummy(seed),
        }
    }

    #[staticmethod]
    fn mnist(k: usize, seed: u64) -> Self {
        TrainConfig {
            inner: trainer::TrainConfig::mnist(k, seed),
        }
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps
    }

    #[setter]
    fn set_max_steps(&mut self, v: usize) {
        self.inner.max_steps = v;
    }

    #[getter]
    fn min_steps_before_stopping(&self) -> usize {
        self.inner.min_steps_before_stopping
    }

    #[setter]
    fn set_min_steps_before_stopping(&mut self, v: usize) {
        self.inner.min_steps_before_stopping = v;
    }

    #[getter]
    fn eval_every(&self) -> usize {
        self.inner.eval_every
    }

    #[setter]
    fn set_eval_every(&mut self, v: usize) {
        self.inner.eval_every = v;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.learning_rate = v;
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "TrainConfig(k={}, seed={}, max_steps={}, batch_size={}, learning_rate={})",
            c.k, c.seed, c.max_steps, c.batch_size, c.learning_rate
        )
    }
}

/// A trained generator/discriminator pair.
#[pyclass(module = "open_sslac")]
struct Model {
    outcome: TrainOutcome,
    config: trainer::TrainConfig,
}

impl Model {
    fn disc(&mut self) -> &mut Sequential<f32> {
        &mut self.outcome.discriminator
    }
}

#[pymethods]
impl Model {
    #[getter]
    fn k(&self) -> usize {
        self.config.k
    }

    #[getter]
    fn best_step(&self) -> Option<usize> {
        self.outcome.log.best_step
    }

    #[getter]
    fn best_accuracy(&self) -> Option<f64> {
        self.outcome.log.best_accuracy
    }

    /// The training log as JSON lines.
    fn log_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.outcome
            .log
            .write_jsonl(&mut buf)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// 1-based system classes of planar points.
    fn predict(&mut self, pts: Vec<[f64; 2]>) -> PyResult<Vec<usize>> {
        let x = points(&pts)?;
        eval::predict(self.disc(), &x).map_err(value_err)
    }

    /// Fraction of points classified as the unknown class K+1.
    fn open_set_accuracy(&mut self, pts: Vec<[f64; 2]>) -> PyResult<f64> {
        let x = points(&pts)?;
        let k = self.config.k;
        eval::open_set_accuracy(self.disc(), &x, k).map_err(value_err)
    }

    /// Evaluation on a blob domain as a JSON report.
    fn evaluate(&mut self, domain: &DummyDomain) -> PyResult<String> {
        let probes = vec![("open_probes".to_string(), domain.domain.open_probe_points.clone())];
        let seed = self.config.seed;
        let report = eval::evaluate(self.disc(), &domain.split, &probes, seed).map_err(value_err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Class grid over `bounds = (x_min, x_max, y_min, y_max)`, top row first.
    #[pyo3(signature = (resolution = 256, bounds = None))]
    fn boundary_raster(
        &mut self,
        resolution: usize,
        bounds: Option<(f64, f64, f64, f64)>,
    ) -> PyResult<Vec<Vec<usize>>> {
        let b = bounds.map_or(Bounds::square(dataset::PROBE_EXTENT), |(x_min, x_max, y_min, y_max)| Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        });
        let r = eval::boundary_raster(self.disc(), &b, resolution).map_err(value_err)?;
        Ok(r.cells.chunks(r.resolution).map(<[usize]>::to_vec).collect())
    }

    fn checkpoint_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &trainer::checkpoint_of(&self.outcome, &self.config).to_bytes())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let bytes = trainer::checkpoint_of(&self.outcome, &self.config).to_bytes();
        std::fs::write(path, bytes).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[staticmethod]
    fn from_checkpoint_bytes(data: &[u8]) -> PyResult<Self> {
        let ck = Checkpoint::from_bytes(data).map_err(value_err)?;
        let (config, generator, discriminator) = trainer::restore(&ck).map_err(value_err)?;
        Ok(Model {
            outcome: TrainOutcome {
                generator,
                discriminator,
                log: Default::default(),
            },
            config,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

/// Trains on a blob domain. Releases the interpreter lock while running.
#[pyfunction]
fn train(py: Python<'_>, domain: &DummyDomain, config: &TrainConfig) -> PyResult<Model> {
    let config = config.inner.clone();
    let split = &domain.split;
    let outcome = py
        .detach(|| trainer::train(split, &config))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(Model { outcome, config })
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("open-sslac".to_string()).chain(args);
    open_sslac::cli::run(argv)
}

#[pymodule]
#[pyo3(name = "open_sslac")]
fn open_sslac_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(supervised_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gan_discriminator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(total_discriminator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_f1, m)?)?;
    m.add_function(wrap_pyfunction!(f1_macro, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<DummyDomain>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    Ok(())
}
