//! Alternating discriminator/generator optimisation with fair-validation
//! model selection, plus multi-run experiments.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, LabelledSet, SsLacSplit};
use crate::eval::{evaluate, EvalError, EvalReport};
pub use crate::eval::fair_validation_accuracy;
use crate::losses::{
    gan_discriminator_loss, generator_loss, generator_loss_non_saturating, k1_column,
    supervised_loss, total_discriminator_loss, GeneratorObjective, LossWeights,
};
use crate::models::{Architecture, DiscriminatorSpec, GeneratorSpec, MlpPairSpec, ModelError};
use crate::nn::{Adam, Checkpoint, ModelParams, NnError, Sequential, Tensor};
use crate::seeding::{run_seed, stream_rng, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize, log: Box<TrainLog> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Prior over the generator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    #[default]
    Normal,
    /// Uniform on `[0, 1)`.
    Uniform,
}

/// Hyperparameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub min_steps_before_stopping: usize,
    pub eval_every: usize,
    /// Steps without a strict improvement before stopping.
    pub patience: usize,
    pub latent: LatentDistribution,
    pub generator_objective: GeneratorObjective,
    pub loss_weights: LossWeights,
    pub architecture: Architecture,
}

impl TrainConfig {
    /// Convolutional defaults for 28x28 images.
    pub fn mnist(k: usize, seed: u64) -> Self {
        TrainConfig {
            k,
            seed,
            batch_size: 128,
            learning_rate: 2e-4,
            max_steps: 5000,
            min_steps_before_stopping: 1000,
            eval_every: 50,
            patience: 2000,
            latent: LatentDistribution::Normal,
            generator_objective: GeneratorObjective::Saturating,
            loss_weights: LossWeights::default(),
            architecture: Architecture::Cnn {
                generator: GeneratorSpec::default(),
                discriminator: DiscriminatorSpec::default(),
            },
        }
    }

    /// Dense defaults for the planar blob domain.
    pub fn dummy(seed: u64) -> Self {
        TrainConfig {
            max_steps: 3000,
            patience: 500,
            architecture: Architecture::Mlp(MlpPairSpec::default()),
            ..Self::mnist(crate::dataset::KNOWN_BLOBS.len(), seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_steps == 0 || self.eval_every == 0 {
            return bad("max_steps and eval_every must be positive");
        }
        if self.min_steps_before_stopping > self.max_steps {
            return bad("min_steps_before_stopping exceeds max_steps");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// One optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub generator_loss: f64,
    pub discriminator_supervised: f64,
    pub discriminator_gan: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fair_validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Patience,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub best_step: Option<usize>,
    pub best_accuracy: Option<f64>,
    pub stop_reason: Option<StopReason>,
}

#[derive(Serialize)]
struct LogSummary<'a> {
    best_step: Option<usize>,
    best_accuracy: Option<f64>,
    stop_reason: &'a Option<StopReason>,
}

impl TrainLog {
    /// One JSON object per step, then one summary object.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        let summary = LogSummary {
            best_step: self.best_step,
            best_accuracy: self.best_accuracy,
            stop_reason: &self.stop_reason,
        };
        serde_json::to_writer(&mut *w, &summary)?;
        w.write_all(b"\n")
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.fair_validation_accuracy.map(|a| (r.step, a)))
    }
}

/// Trained networks and the log that selected them.
#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: Sequential<f32>,
    pub discriminator: Sequential<f32>,
    pub log: TrainLog,
}

/// Draws index batches: labelled ones cycle through the known classes,
/// unlabelled ones are uniform with replacement.
struct BatchSampler {
    by_class: Vec<Vec<usize>>,
    unlabelled: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(labelled: &LabelledSet, k: usize, unlabelled: usize, seed: u64) -> Result<Self, TrainError> {
        let mut by_class = vec![Vec::new(); k];
        for (i, &c) in labelled.classes.iter().enumerate() {
            if c == 0 || c > k {
                return Err(TrainError::Config(format!("labelled sample {i} has class {c}")));
            }
            by_class[c - 1].push(i);
        }
        if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
            return Err(TrainError::Config(format!("no labelled samples of class {}", c + 1)));
        }
        if unlabelled == 0 {
            return Err(TrainError::Config("unlabelled set is empty".into()));
        }
        Ok(BatchSampler {
            by_class,
            unlabelled,
            rng: stream_rng(seed, Stream::Batches),
        })
    }

    fn labelled(&mut self, b: usize) -> Vec<usize> {
        let k = self.by_class.len();
        let offset = self.rng.random_range(0..k);
        (0..b)
            .map(|i| {
                let pool = &self.by_class[(i + offset) % k];
                pool[self.rng.random_range(0..pool.len())]
            })
            .collect()
    }

    fn unlabelled(&mut self, b: usize) -> Vec<usize> {
        (0..b).map(|_| self.rng.random_range(0..self.unlabelled)).collect()
    }
}

fn sample_latent(rng: &mut ChaCha8Rng, dist: LatentDistribution, b: usize, z: usize) -> Tensor<f32> {
    let data = (0..b * z)
        .map(|_| match dist {
            LatentDistribution::Normal => StandardNormal.sample(rng),
            LatentDistribution::Uniform => rng.random::<f32>(),
        })
        .collect();
    Tensor::from_vec(&[b, z], data).expect("sizes agree")
}

fn one_hot(classes: &[usize], width: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[classes.len(), width]);
    for (row, &c) in t.data_mut().chunks_mut(width).zip(classes) {
        row[c - 1] = 1.0;
    }
    t
}

/// Trains a generator/discriminator pair on `split`. Each step makes one
/// discriminator update on a labelled, an unlabelled and a generated batch,
/// then one generator update. The returned networks carry the parameters
/// of the best fair-validation evaluation at or after
/// `min_steps_before_stopping`; ties keep the later evaluation.
pub fn train(split: &SsLacSplit, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(split, config, |_| {})
}

/// [`train`], calling `observe` after every step.
pub fn train_with_observer(
    split: &SsLacSplit,
    config: &TrainConfig,
    mut observe: impl FnMut(&StepRecord),
) -> Result<TrainOutcome, TrainError> {
    train_with_monitor(split, config, |r, _, _| observe(r))
}

/// [`train`], calling `monitor` after every step with the current
/// generator and discriminator. Inference-mode forward passes inside the
/// monitor leave the run unchanged; anything else voids determinism.
pub fn train_with_monitor(
    split: &SsLacSplit,
    config: &TrainConfig,
    mut monitor: impl FnMut(&StepRecord, &mut Sequential<f32>, &mut Sequential<f32>),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if split.k != config.k {
        return Err(TrainError::Config(format!(
            "config k = {} but the split has {} known classes",
            config.k, split.k
        )));
    }
    let arch = &config.architecture;
    let sample_shape = arch.sample_shape();
    if split.labelled.samples.shape()[1..] != sample_shape[..] {
        return Err(TrainError::Config(format!(
            "samples have shape {:?}, architecture expects {:?}",
            &split.labelled.samples.shape()[1..],
            sample_shape
        )));
    }

    let k = config.k;
    let b = config.batch_size;
    let mut gen: Sequential<f32> = arch.build_generator(config.seed)?;
    let mut disc: Sequential<f32> = arch.build_discriminator(k, config.seed)?;
    let adam = Adam::new(config.learning_rate);
    let mut sampler = BatchSampler::new(&split.labelled, k, split.unlabelled.rows(), config.seed)?;
    let mut latent_rng = stream_rng(config.seed, Stream::Latent);

    let mut log = TrainLog::default();
    let mut best: Option<(ModelParams<f32>, ModelParams<f32>)> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut last_improvement = 0;

    for step in 1..=config.max_steps {
        let li = sampler.labelled(b);
        let ui = sampler.unlabelled(b);
        let x_lab = split.labelled.samples.select_rows(&li);
        let x_unl = split.unlabelled.select_rows(&ui);
        let classes: Vec<usize> = li.iter().map(|&i| split.labelled.classes[i]).collect();
        let z = sample_latent(&mut latent_rng, config.latent, b, arch.z_length());

        // Discriminator update on [labelled; unlabelled; generated].
        let fake = gen.forward(&z, true)?;
        let x = Tensor::concat_rows(&[&x_lab, &x_unl, &fake])?;
        let logits = disc.forward(&x, true)?;
        let lab_logits = logits.slice_rows(0, b);
        let unl_logits = logits.slice_rows(b, 2 * b);
        let fake_logits = logits.slice_rows(2 * b, 3 * b);
        let sup = supervised_loss(&lab_logits, &one_hot(&classes, k + 1), &fake_logits, &config.loss_weights)?;
        let gan = gan_discriminator_loss(
            &k1_column(&unl_logits),
            &k1_column(&lab_logits),
            &k1_column(&fake_logits),
            &config.loss_weights,
        )?;
        let d_loss = total_discriminator_loss(sup.value, gan.value);

        let mut grad = Tensor::zeros(logits.shape());
        {
            let g = grad.data_mut();
            let w = k + 1;
            g[..b * w].copy_from_slice(sup.grad_labelled.data());
            g[2 * b * w..].copy_from_slice(sup.grad_fake.data());
            for i in 0..b {
                g[i * w + k] += gan.grad_labelled[i];
                g[(b + i) * w + k] += gan.grad_unlabelled[i];
                g[(2 * b + i) * w + k] += gan.grad_fake[i];
            }
        }
        disc.zero_grads();
        disc.backward(&grad, false)?;
        adam.step(disc.params_mut())?;

        // Generator update through the freshly updated discriminator.
        let logits = disc.forward(&fake, true)?;
        let k1 = k1_column(&logits);
        let g_loss = match config.generator_objective {
            GeneratorObjective::Saturating => generator_loss(&k1)?,
            GeneratorObjective::NonSaturating => generator_loss_non_saturating(&k1)?,
        };
        let mut grad = Tensor::zeros(logits.shape());
        for (row, &g) in grad.data_mut().chunks_mut(k + 1).zip(&g_loss.grad) {
            row[k] = g;
        }
        disc.zero_grads();
        let dx = disc.backward(&grad, true)?.expect("input gradient requested");
        disc.zero_grads();
        gen.zero_grads();
        gen.backward(&dx, false)?;
        adam.step(gen.params_mut())?;

        let mut record = StepRecord {
            step,
            generator_loss: g_loss.value as f64,
            discriminator_supervised: sup.value as f64,
            discriminator_gan: gan.value as f64,
            fair_validation_accuracy: None,
        };
        if !(d_loss.is_finite() && g_loss.value.is_finite()) {
            log.records.push(record);
            return Err(TrainError::Divergence {
                step,
                log: Box::new(log),
            });
        }

        let evaluate_now = step % config.eval_every == 0 || step == config.max_steps;
        let mut stop = None;
        if evaluate_now {
            let acc = fair_validation_accuracy(&mut disc, &split.fair_validation)?;
            record.fair_validation_accuracy = Some(acc);
            if step >= config.min_steps_before_stopping {
                if acc > best_acc || best.is_none() {
                    last_improvement = step;
                }
                if acc >= best_acc {
                    best_acc = acc;
                    best = Some((gen.params().clone(), disc.params().clone()));
                    log.best_step = Some(step);
                    log.best_accuracy = Some(acc);
                }
                if step - last_improvement >= config.patience {
                    stop = Some(StopReason::Patience);
                }
            }
        }
        monitor(&record, &mut gen, &mut disc);
        log.records.push(record);
        if let Some(reason) = stop {
            log.stop_reason = Some(reason);
            break;
        }
    }
    if log.stop_reason.is_none() {
        log.stop_reason = Some(StopReason::MaxSteps);
    }
    if let Some((g, d)) = best {
        gen.params_mut().copy_values_from(&g)?;
        disc.params_mut().copy_values_from(&d)?;
    }
    Ok(TrainOutcome {
        generator: gen,
        discriminator: disc,
        log,
    })
}

/// Packs both networks and the config into one checkpoint.
pub fn checkpoint_of(outcome: &TrainOutcome, config: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(config.to_json());
    ck.push_params(outcome.generator.params());
    ck.push_params(outcome.discriminator.params());
    ck
}

/// Rebuilds the networks stored in a checkpoint.
pub fn restore(ck: &Checkpoint) -> Result<(TrainConfig, Sequential<f32>, Sequential<f32>), TrainError> {
    let config: TrainConfig = serde_json::from_str(&ck.config)
        .map_err(|e| TrainError::Config(format!("checkpoint config: {e}")))?;
    let mut gen: Sequential<f32> = config.architecture.build_generator(config.seed)?;
    let mut disc: Sequential<f32> = config.architecture.build_discriminator(config.k, config.seed)?;
    ck.load_params(gen.params_mut())?;
    ck.load_params(disc.params_mut())?;
    Ok((config, gen, disc))
}

/// Mean and sample standard deviation; the deviation is absent for a
/// single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Some(Aggregate { n, mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub known_classes: Vec<u8>,
    pub best_step: Option<usize>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub k: usize,
    pub master_seed: u64,
    pub config: TrainConfig,
    pub runs: Vec<RunRecord>,
    pub failures: usize,
    pub f1_macro: Option<Aggregate>,
    pub open_set_accuracy: BTreeMap<String, Aggregate>,
}

/// Runs `n_runs` independent trainings. Run `i` uses the seed
/// `run_seed(base.seed, i)` both for its split (via `make_split`) and for
/// training. Failed runs are recorded and excluded from the aggregates.
pub fn run_experiment<F>(
    n_runs: usize,
    base: &TrainConfig,
    mut make_split: F,
    foreign: &[(String, Tensor<f32>)],
) -> Result<ExperimentReport, TrainError>
where
    F: FnMut(u64) -> Result<SsLacSplit, TrainError>,
{
    if n_runs == 0 {
        return Err(TrainError::Config("n_runs must be at least 1".into()));
    }
    base.validate()?;
    let mut runs = Vec::with_capacity(n_runs);
    for index in 0..n_runs {
        let seed = run_seed(base.seed, index);
        let config = TrainConfig {
            seed,
            ..base.clone()
        };
        let mut rec = RunRecord {
            index,
            seed,
            known_classes: Vec::new(),
            best_step: None,
            report: None,
            error: None,
        };
        let result = make_split(seed).and_then(|split| {
            rec.known_classes = split.known_classes.clone();
            let mut out = train(&split, &config)?;
            rec.best_step = out.log.best_step;
            Ok(evaluate(&mut out.discriminator, &split, foreign, seed)?)
        });
        match result {
            Ok(r) => rec.report = Some(r),
            Err(e) => rec.error = Some(e.to_string()),
        }
        runs.push(rec);
    }
    let ok: Vec<&EvalReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let f1: Vec<f64> = ok.iter().map(|r| r.f1_macro).collect();
    let mut open = BTreeMap::new();
    for (name, _) in foreign {
        let v: Vec<f64> = ok.iter().filter_map(|r| r.open_set_accuracy.get(name).copied()).collect();
        if let Some(a) = Aggregate::of(&v) {
            open.insert(name.clone(), a);
        }
    }
    Ok(ExperimentReport {
        k: base.k,
        master_seed: base.seed,
        config: base.clone(),
        failures: runs.len() - ok.len(),
        runs,
        f1_macro: Aggregate::of(&f1),
        open_set_accuracy: open,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_conventions() {
        let a = Aggregate::of(&[0.5]).unwrap();
        assert_eq!((a.n, a.mean, a.std), (1, 0.5, None));
        let a = Aggregate::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.std, Some(1.0));
        assert!(Aggregate::of(&[]).is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::mnist(2, 1);
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::dummy(1);
        c.min_steps_before_stopping = c.max_steps + 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn one_hot_rows() {
        let t = one_hot(&[1, 3], 3);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
