//! Run configuration file (TOML).
//!
//! ```toml
//! [run]
//! domain = "mnist"        # or "dummy"
//! k = 2
//! seed = 7
//!
//! [data]
//! train_images = "data/mnist/train-images-idx3-ubyte"
//! train_labels = "data/mnist/train-labels-idx1-ubyte"
//! test_images = "data/mnist/t10k-images-idx3-ubyte"
//! test_labels = "data/mnist/t10k-labels-idx1-ubyte"
//!
//! [data.foreign]
//! fashion = "data/fashion/t10k-images-idx3-ubyte"
//! ```
//!
//! Only `run.domain`, `run.k`, `run.seed` and, for the MNIST domain, the
//! four `data` paths are required. Every other key has a default; unknown
//! keys are rejected. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SplitParams, UnlabelledCount, KNOWN_BLOBS};
use crate::losses::{GeneratorObjective, LossWeights};
use crate::models::{Architecture, DiscriminatorSpec, GeneratorSpec, MlpPairSpec};
use crate::trainer::{LatentDistribution, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing config key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Mnist,
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub domain: Domain,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub labelled_per_class: usize,
    pub unlabelled_per_class: Option<usize>,
    /// Total-count reading of the unlabelled size; excludes
    /// `unlabelled_per_class`.
    pub unlabelled_total: Option<usize>,
    pub val_fraction: f64,
    pub samples_per_blob: usize,
    /// Open-set datasets by name, images only.
    pub foreign: BTreeMap<String, PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            labelled_per_class: 1400,
            unlabelled_per_class: None,
            unlabelled_total: None,
            val_fraction: 0.2,
            samples_per_blob: 500,
            foreign: BTreeMap::new(),
        }
    }
}

/// `[train]`; unset keys take the per-domain defaults of [`TrainConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    pub min_steps_before_stopping: Option<usize>,
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
    pub latent: Option<LatentDistribution>,
    pub generator_objective: Option<GeneratorObjective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub discriminator: DiscriminatorSpec,
    #[serde(default)]
    pub mlp: MlpPairSpec,
}

/// The four MNIST-format files of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<config>".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        d.foreign.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = self.run.k;
        match self.run.domain {
            Domain::Mnist => {
                if !(1..=9).contains(&k) {
                    return Err(ConfigError::Invalid {
                        key: "run.k",
                        reason: format!("{k} is outside 1..=9"),
                    });
                }
                self.data_paths()?;
            }
            Domain::Dummy => {
                if k != KNOWN_BLOBS.len() {
                    return Err(ConfigError::Invalid {
                        key: "run.k",
                        reason: format!("the dummy domain has {} known blobs, got {k}", KNOWN_BLOBS.len()),
                    });
                }
                if self.data.samples_per_blob < 20 {
                    return Err(ConfigError::Invalid {
                        key: "data.samples_per_blob",
                        reason: "must be at least 20".into(),
                    });
                }
            }
        }
        if self.data.unlabelled_per_class.is_some() && self.data.unlabelled_total.is_some() {
            return Err(ConfigError::Invalid {
                key: "data.unlabelled_total",
                reason: "set either unlabelled_per_class or unlabelled_total".into(),
            });
        }
        self.train_config(self.run.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid {
                key: "train",
                reason: e.to_string(),
            })
    }

    pub fn data_paths(&self) -> Result<DataPaths, ConfigError> {
        let d = &self.data;
        Ok(DataPaths {
            train_images: d.train_images.clone().ok_or(ConfigError::MissingKey("data.train_images"))?,
            train_labels: d.train_labels.clone().ok_or(ConfigError::MissingKey("data.train_labels"))?,
            test_images: d.test_images.clone().ok_or(ConfigError::MissingKey("data.test_images"))?,
            test_labels: d.test_labels.clone().ok_or(ConfigError::MissingKey("data.test_labels"))?,
        })
    }

    pub fn split_params(&self, seed: u64) -> SplitParams {
        let d = &self.data;
        let unlabelled = match (d.unlabelled_per_class, d.unlabelled_total) {
            (_, Some(t)) => UnlabelledCount::Total(t),
            (Some(n), None) => UnlabelledCount::PerClass(n),
            (None, None) => SplitParams::mnist(self.run.k, seed).unlabelled,
        };
        SplitParams {
            k: self.run.k,
            seed,
            labelled_per_class: d.labelled_per_class,
            unlabelled,
            val_fraction: d.val_fraction,
        }
    }

    /// Training hyperparameters with `seed` as the master seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut c = match self.run.domain {
            Domain::Mnist => TrainConfig::mnist(self.run.k, seed),
            Domain::Dummy => TrainConfig::dummy(seed),
        };
        c.k = self.run.k;
        let t = &self.train;
        c.batch_size = t.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = t.learning_rate.unwrap_or(c.learning_rate);
        c.max_steps = t.max_steps.unwrap_or(c.max_steps);
        c.min_steps_before_stopping = t.min_steps_before_stopping.unwrap_or(c.min_steps_before_stopping);
        c.eval_every = t.eval_every.unwrap_or(c.eval_every);
        c.patience = t.patience.unwrap_or(c.patience);
        c.latent = t.latent.unwrap_or(c.latent);
        c.generator_objective = t.generator_objective.unwrap_or(c.generator_objective);
        c.loss_weights = self.loss;
        c.architecture = match self.run.domain {
            Domain::Mnist => Architecture::Cnn {
                generator: self.generator.clone(),
                discriminator: self.discriminator.clone(),
            },
            Domain::Dummy => Architecture::Mlp(self.mlp.clone()),
        };
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMMY: &str = "[run]\ndomain = \"dummy\"\nk = 3\nseed = 4\n";

    #[test]
    fn minimal_dummy_config() {
        let c = RunConfig::parse(DUMMY).unwrap();
        let t = c.train_config(4);
        assert_eq!(t.max_steps, 3000);
        assert_eq!(t.batch_size, 128);
        assert!(matches!(t.architecture, Architecture::Mlp(_)));
    }

    #[test]
    fn missing_and_unknown_keys() {
        let e = RunConfig::parse("[run]\ndomain = \"dummy\"\nk = 3\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = RunConfig::parse("[run]\ndomain = \"mnist\"\nk = 2\nseed = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::MissingKey("data.train_images")));
        let e = RunConfig::parse(&format!("{DUMMY}[train]\nbatchsize = 3\n")).unwrap_err();
        assert!(e.to_string().contains("batchsize"), "{e}");
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = format!("{DUMMY}[train]\nmax_steps = 40\nmin_steps_before_stopping = 10\n[loss]\ngan_fake = 0.0\n");
        let c = RunConfig::parse(&text).unwrap();
        let t = c.train_config(4);
        assert_eq!((t.max_steps, t.min_steps_before_stopping), (40, 10));
        assert_eq!(t.loss_weights.gan_fake, 0.0);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_values() {
        let e = RunConfig::parse("[run]\ndomain = \"dummy\"\nk = 2\nseed = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "run.k", .. }));
        let e = RunConfig::parse(&format!("{DUMMY}[train]\nbatch_size = 1\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "train", .. }));
    }
}
