//! Command-line front end: `prepare`, `train`, `evaluate`, `boundary` and
//! `experiment`. Exit codes: 0 success, 1 validation error, 2 runtime
//! error (including training divergence).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Domain, RunConfig};
use crate::dataset::{
    build_sslac_split, make_dummy_domain, DatasetError, ImageSet, SplitIndices, SplitParams,
    SsLacSplit, SyntheticDomain,
};
use crate::eval::{boundary_raster, evaluate, Bounds, EvalError};
use crate::nn::{Checkpoint, NnError, Tensor};
use crate::trainer::{checkpoint_of, restore, run_experiment, train_with_observer, TrainError};

pub const SPLIT_FILE: &str = "split.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const RASTER_TEXT_FILE: &str = "raster.txt";
pub const RASTER_IMAGE_FILE: &str = "raster.ppm";
pub const EXPERIMENT_FILE: &str = "experiment.json";
/// Name under which the planar domain's open probes are reported.
pub const PROBE_SET: &str = "open_probes";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InputShape { .. } | EvalError::NotPlanar(_) | EvalError::Resolution(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Dataset(_) => CliError::Validation(e.to_string()),
            TrainError::Eval(e) => e.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "open-sslac", version, about = "K+1 semi-supervised GAN open-set classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the known classes and write the split manifest.
    Prepare(PrepareArgs),
    /// Train on a prepared split; writes checkpoint and step log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test partition and foreign datasets.
    Evaluate(EvaluateArgs),
    /// Rasterise the decision regions of a planar model.
    Boundary(BoundaryArgs),
    /// Repeated independent runs with aggregate statistics.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace files in an existing output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.k`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Split manifest written by `prepare`.
    #[arg(long)]
    pub split: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Foreign image set as `name=path`; repeatable.
    #[arg(long = "foreign", value_parser = parse_named_path)]
    pub foreign: Vec<(String, PathBuf)>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cells per axis.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// `x_min,x_max,y_min,y_max`; defaults to the planar domain's frame.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<Bounds>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x_min, x_max, y_min, y_max] if x_min < x_max && y_min < y_max => Ok(Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        }),
        _ => Err("expected x_min,x_max,y_min,y_max with min < max".into()),
    }
}

/// A dataset file and its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl DatasetRef {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(DatasetRef {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }

    fn verify(&self) -> Result<(), CliError> {
        let actual = sha256_file(&self.path)?;
        if actual != self.sha256 {
            return Err(CliError::Validation(format!(
                "{} changed since the split was prepared (sha256 {actual}, expected {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub labelled: usize,
    pub fair_validation: usize,
    pub unlabelled: usize,
    pub test: usize,
}

/// What `prepare` writes: enough to rebuild the exact split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub domain: Domain,
    pub seed: u64,
    pub k: usize,
    pub known_classes: Vec<u8>,
    pub sizes: PartitionSizes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SplitParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_blob: Option<usize>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetRef>,
    #[serde(default)]
    pub labelled: Vec<usize>,
    #[serde(default)]
    pub fair_validation: Vec<usize>,
    #[serde(default)]
    pub unlabelled: Vec<usize>,
}

impl SplitManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e.message())))
    }

    /// Builds the split for `config` (MNIST) or with the manifest's own
    /// domain parameters (dummy).
    pub fn prepare(config: &RunConfig, k: usize, seed: u64) -> Result<Self, CliError> {
        match config.run.domain {
            Domain::Mnist => {
                let paths = config.data_paths()?;
                let params = SplitParams {
                    k,
                    ..config.split_params(seed)
                };
                params.validate()?;
                let train = ImageSet::load(&paths.train_images, Some(&paths.train_labels))?;
                let test_labels = ImageSet::load(&paths.test_images, Some(&paths.test_labels))?;
                let labels = train.labels.as_ref().expect("loaded with labels");
                let idx = build_sslac_split(labels, &params)?;
                let mut datasets = BTreeMap::new();
                for (name, p) in [
                    ("train_images", &paths.train_images),
                    ("train_labels", &paths.train_labels),
                    ("test_images", &paths.test_images),
                    ("test_labels", &paths.test_labels),
                ] {
                    datasets.insert(name.to_string(), DatasetRef::of(p)?);
                }
                Ok(SplitManifest {
                    domain: Domain::Mnist,
                    seed,
                    k,
                    sizes: PartitionSizes {
                        labelled: idx.labelled.len(),
                        fair_validation: idx.fair_validation.len(),
                        unlabelled: idx.unlabelled.len(),
                        test: test_labels.count,
                    },
                    known_classes: idx.known_classes,
                    params: Some(params),
                    samples_per_blob: None,
                    datasets,
                    labelled: idx.labelled,
                    fair_validation: idx.fair_validation,
                    unlabelled: idx.unlabelled,
                })
            }
            Domain::Dummy => {
                let spb = config.data.samples_per_blob;
                let (domain, split) = make_dummy_domain(seed, spb);
                Ok(SplitManifest {
                    domain: Domain::Dummy,
                    seed,
                    k,
                    known_classes: domain.known_ids.clone(),
                    sizes: PartitionSizes {
                        labelled: split.labelled.len(),
                        fair_validation: split.fair_validation.len(),
                        unlabelled: split.unlabelled.rows(),
                        test: split.test().len(),
                    },
                    params: None,
                    samples_per_blob: Some(spb),
                    datasets: BTreeMap::new(),
                    labelled: Vec::new(),
                    fair_validation: Vec::new(),
                    unlabelled: Vec::new(),
                })
            }
        }
    }

    /// Materialises the split, checking dataset checksums first.
    pub fn materialise(&self) -> Result<(SsLacSplit, Option<SyntheticDomain>), CliError> {
        match self.domain {
            Domain::Mnist => {
                let get = |name: &str| {
                    self.datasets
                        .get(name)
                        .ok_or_else(|| CliError::Validation(format!("split manifest lacks dataset `{name}`")))
                };
                for d in self.datasets.values() {
                    d.verify()?;
                }
                let train = ImageSet::load(&get("train_images")?.path, Some(&get("train_labels")?.path))?;
                let test = ImageSet::load(&get("test_images")?.path, Some(&get("test_labels")?.path))?;
                let idx = SplitIndices {
                    seed: self.seed,
                    known_classes: self.known_classes.clone(),
                    labelled: self.labelled.clone(),
                    fair_validation: self.fair_validation.clone(),
                    unlabelled: self.unlabelled.clone(),
                };
                Ok((SsLacSplit::from_images(&train, &test, &idx)?, None))
            }
            Domain::Dummy => {
                let spb = self
                    .samples_per_blob
                    .ok_or_else(|| CliError::Validation("dummy split manifest lacks samples_per_blob".into()))?;
                if spb < 20 {
                    return Err(CliError::Validation("samples_per_blob must be at least 20".into()));
                }
                let (domain, split) = make_dummy_domain(self.seed, spb);
                Ok((split, Some(domain)))
            }
        }
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub datasets: BTreeMap<String, DatasetRef>,
    pub seeds: BTreeMap<String, u64>,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub started: u64,
    pub finished: u64,
}

fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Output directory guard: refuses a non-empty directory unless
/// `overwrite` is set. Nothing is created until [`Output::write`].
struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn check(args: &OutArgs) -> Result<Self, CliError> {
        let dir = &args.out;
        if dir.exists() {
            if !dir.is_dir() {
                return Err(CliError::Validation(format!("{} is not a directory", dir.display())));
            }
            let non_empty = fs::read_dir(dir).map_err(runtime)?.next().is_some();
            if non_empty && !args.overwrite {
                return Err(CliError::Validation(format!(
                    "{} exists and is not empty; pass --overwrite to replace its files",
                    dir.display()
                )));
            }
        }
        Ok(Output {
            dir: dir.clone(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.artifacts = std::mem::take(&mut self.written);
        manifest.artifacts.push(MANIFEST_FILE.to_string());
        manifest.finished = now();
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        self.write(MANIFEST_FILE, json.as_bytes())?;
        Ok(())
    }
}

fn manifest(command: &str, config: Option<String>, datasets: BTreeMap<String, DatasetRef>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config,
        datasets,
        seeds: BTreeMap::new(),
        artifacts: Vec::new(),
        started: now(),
        finished: 0,
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn restore_checkpoint(
    path: &Path,
) -> Result<(crate::trainer::TrainConfig, crate::nn::Sequential<f32>), CliError> {
    let ck = load_checkpoint(path)?;
    let (config, _, disc) = restore(&ck).map_err(|e| match e {
        TrainError::Nn(NnError::Checkpoint { .. }) | TrainError::Config(_) => {
            CliError::Validation(format!("{}: {e}", path.display()))
        }
        other => other.into(),
    })?;
    Ok((config, disc))
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<SplitManifest, CliError> {
    let config = RunConfig::load(&args.config)?;
    let k = args.k.unwrap_or(config.run.k);
    let seed = args.seed.unwrap_or(config.run.seed);
    let mut config = config;
    config.run.k = k;
    config.validate()?;
    let mut out = Output::check(&args.out)?;
    let mut run = manifest("prepare", Some(config.to_toml()), BTreeMap::new());
    let split = SplitManifest::prepare(&config, k, seed)?;
    run.datasets = split.datasets.clone();
    run.seeds.insert("master".into(), seed);
    out.write(SPLIT_FILE, split.to_toml().as_bytes())?;
    out.finish(run)?;
    println!("known classes: {:?}", split.known_classes);
    let s = split.sizes;
    println!(
        "labelled {}  fair validation {}  unlabelled {}  test {}",
        s.labelled, s.fair_validation, s.unlabelled, s.test
    );
    Ok(split)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config)?;
    let split_manifest = SplitManifest::load(&args.split)?;
    if split_manifest.domain != config.run.domain || split_manifest.k != config.run.k {
        return Err(CliError::Validation(format!(
            "config is {:?} with k = {}, split manifest is {:?} with k = {}",
            config.run.domain, config.run.k, split_manifest.domain, split_manifest.k
        )));
    }
    let mut out = Output::check(&args.out)?;
    let train_config = config.train_config(split_manifest.seed);
    train_config.validate()?;
    let mut run = manifest("train", Some(config.to_toml()), split_manifest.datasets.clone());
    run.seeds.insert("master".into(), split_manifest.seed);
    let (split, _) = split_manifest.materialise()?;

    let result = train_with_observer(&split, &train_config, |r| {
        if let Some(acc) = r.fair_validation_accuracy {
            println!(
                "step {:>5}  g {:>9.4}  d_sup {:>8.4}  d_gan {:>8.4}  fair-val {:.4}",
                r.step, r.generator_loss, r.discriminator_supervised, r.discriminator_gan, acc
            );
        }
    });
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Divergence { step, log }) => {
            let mut buf = Vec::new();
            log.write_jsonl(&mut buf).map_err(runtime)?;
            out.write(LOG_FILE, &buf)?;
            out.finish(run)?;
            return Err(CliError::Runtime(format!(
                "training diverged at step {step}; log kept in {}",
                args.out.out.join(LOG_FILE).display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let mut buf = Vec::new();
    outcome.log.write_jsonl(&mut buf).map_err(runtime)?;
    out.write(LOG_FILE, &buf)?;
    out.write(CHECKPOINT_FILE, &checkpoint_of(&outcome, &train_config).to_bytes())?;
    out.finish(run)?;
    println!(
        "best step {:?}  fair-val accuracy {:?}",
        outcome.log.best_step, outcome.log.best_accuracy
    );
    Ok(())
}

fn load_foreign(named: &[(String, PathBuf)]) -> Result<Vec<(String, Tensor<f32>, DatasetRef)>, CliError> {
    named
        .iter()
        .map(|(name, path)| {
            let set = ImageSet::load(path, None)?;
            Ok((name.clone(), set.all_normalized(), DatasetRef::of(path)?))
        })
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<crate::eval::EvalReport, CliError> {
    let (config, mut disc) = restore_checkpoint(&args.checkpoint)?;
    let split_manifest = SplitManifest::load(&args.split)?;
    if config.k != split_manifest.k {
        return Err(CliError::Validation(format!(
            "checkpoint was trained with k = {}, split manifest has k = {}",
            config.k, split_manifest.k
        )));
    }
    let mut out = Output::check(&args.out)?;
    let foreign = load_foreign(&args.foreign)?;
    let mut datasets = split_manifest.datasets.clone();
    for (name, _, r) in &foreign {
        datasets.insert(format!("foreign/{name}"), r.clone());
    }
    let mut run = manifest("evaluate", Some(config.to_json()), datasets);
    run.seeds.insert("master".into(), split_manifest.seed);
    let (split, domain) = split_manifest.materialise()?;
    let mut sets: Vec<(String, Tensor<f32>)> = foreign.into_iter().map(|(n, t, _)| (n, t)).collect();
    if let Some(d) = &domain {
        sets.push((PROBE_SET.to_string(), d.open_probe_points.clone()));
    }
    let report = evaluate(&mut disc, &split, &sets, split_manifest.seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    out.write(REPORT_FILE, json.as_bytes())?;
    out.finish(run)?;
    print!("{}", report.summary());
    Ok(report)
}

pub fn cmd_boundary(args: &BoundaryArgs) -> Result<(), CliError> {
    let (config, mut disc) = restore_checkpoint(&args.checkpoint)?;
    if disc.input_shape() != [2] {
        return Err(EvalError::NotPlanar(disc.input_shape().to_vec()).into());
    }
    let bounds = args.bounds.unwrap_or_else(|| Bounds::square(crate::dataset::PROBE_EXTENT));
    let mut out = Output::check(&args.out)?;
    let mut run = manifest("boundary", Some(config.to_json()), BTreeMap::new());
    run.seeds.insert("master".into(), config.seed);
    let raster = boundary_raster(&mut disc, &bounds, args.resolution)?;
    out.write(RASTER_TEXT_FILE, raster.to_text().as_bytes())?;
    out.write(RASTER_IMAGE_FILE, &raster.to_ppm())?;
    out.finish(run)?;
    let unknown = raster.cells.iter().filter(|&&c| c == raster.k + 1).count();
    println!(
        "{}x{} cells, {:.1}% unknown class",
        raster.resolution,
        raster.resolution,
        100.0 * unknown as f64 / raster.cells.len() as f64
    );
    Ok(())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<crate::trainer::ExperimentReport, CliError> {
    let config = RunConfig::load(&args.config)?;
    if args.runs == 0 {
        return Err(CliError::Validation("--runs must be at least 1".into()));
    }
    let mut out = Output::check(&args.out)?;
    let named: Vec<(String, PathBuf)> = config.data.foreign.clone().into_iter().collect();
    let foreign = load_foreign(&named)?;
    let mut datasets = BTreeMap::new();
    for (name, _, r) in &foreign {
        datasets.insert(format!("foreign/{name}"), r.clone());
    }
    let mut run = manifest("experiment", Some(config.to_toml()), datasets);
    run.seeds.insert("master".into(), config.run.seed);
    let sets: Vec<(String, Tensor<f32>)> = foreign.into_iter().map(|(n, t, _)| (n, t)).collect();
    let base = config.train_config(config.run.seed);

    let mut index = 0;
    let mut manifests = Vec::new();
    let report = run_experiment(
        args.runs,
        &base,
        |seed| {
            let m = SplitManifest::prepare(&config, config.run.k, seed)
                .map_err(|e| TrainError::Config(e.to_string()))?;
            let (split, _) = m.materialise().map_err(|e| TrainError::Config(e.to_string()))?;
            println!("run {index}: seed {seed}, known classes {:?}", m.known_classes);
            manifests.push((format!("run-{index:02}/{SPLIT_FILE}"), m.to_toml()));
            index += 1;
            Ok(split)
        },
        &sets,
    )?;
    for (name, text) in &manifests {
        out.write(name, text.as_bytes())?;
    }
    for r in &report.runs {
        run.seeds.insert(format!("run-{:02}", r.index), r.seed);
    }
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    out.write(EXPERIMENT_FILE, json.as_bytes())?;
    out.finish(run)?;
    if let Some(f) = report.f1_macro {
        println!(
            "f1-macro mean {:.4}  std {}  over {} runs ({} failed)",
            f.mean,
            f.std.map_or("n/a".into(), |s| format!("{s:.4}")),
            f.n,
            report.failures
        );
    }
    for (name, a) in &report.open_set_accuracy {
        println!("open set [{name}] mean {:.4}", a.mean);
    }
    Ok(report)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a).map(|_| ()),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Boundary(a) => cmd_boundary(a),
        Command::Experiment(a) => cmd_experiment(a).map(|_| ()),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
