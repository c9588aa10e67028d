//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! The MNIST criteria read `mnist/` and `fashion/` IDX files from
//! `OPENSSLAC_DATA_DIR` (default `data/` at the workspace root); see
//! `scripts/fetch_data.sh`.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use open_sslac::dataset::{build_sslac_split, make_dummy_domain, ImageSet, SplitParams, SsLacSplit};
use open_sslac::eval::{
    boundary_raster, confusion_matrix, evaluate, f1_macro, open_set_accuracy, predict, Bounds,
    ConfusionMatrix,
};
use open_sslac::losses::{
    gan_discriminator_loss, generator_loss, supervised_loss, total_discriminator_loss, LossWeights,
};
use open_sslac::nn::{softmax_cross_entropy_with_logits, Sequential, Tensor};
use open_sslac::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

/// Collects named checks; the criterion passes only if all of them do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.count += 1;
        if !ok {
            self.failed.push(what.into());
        }
    }

    fn close(&mut self, name: &str, actual: f64, expected: f64, tol: f64) {
        let ok = (actual - expected).abs() <= tol;
        self.check(ok, format!("{name}: {actual:.9} vs {expected:.9}"));
    }

    /// Compares against a decimal literal at the precision it is written in.
    fn stated(&mut self, name: &str, actual: f64, literal: &str) {
        let decimals = literal.split('.').nth(1).map_or(0, str::len) as i32;
        let expected: f64 = literal.parse().unwrap();
        self.close(name, actual, expected, 0.5 * 10f64.powi(-decimals) + 1e-12);
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            Outcome::new(true, format!("{} checks", self.count))
        } else {
            Outcome::new(false, format!("{} of {} failed: {}", self.failed.len(), self.count, self.failed.join("; ")))
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dummy_domain() -> Outcome {
    let t = Instant::now();
    let seed = 0;
    let (domain, split) = make_dummy_domain(seed, 500);
    let k = split.k;
    let mut out = match train(&split, &TrainConfig::dummy(seed)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("training failed: {e}")),
    };
    let disc = &mut out.discriminator;
    let test = split.test();
    let preds = predict(disc, &test.samples).unwrap();
    let (mut known, mut known_hit, mut novel, mut novel_hit) = (0, 0, 0, 0);
    for ((&p, &truth), original) in preds.iter().zip(&test.classes).zip(&test.original) {
        if domain.known_ids.contains(original) {
            known += 1;
            known_hit += usize::from(p == truth);
        } else {
            novel += 1;
            novel_hit += usize::from(p == k + 1);
        }
    }
    let known_acc = known_hit as f64 / known as f64;
    let novel_acc = novel_hit as f64 / novel as f64;
    let probe_acc = open_set_accuracy(disc, &domain.open_probe_points, k).unwrap();
    let raster = boundary_raster(disc, &Bounds::square(domain.extent()), 256).unwrap();
    let unrepresented = raster.unrepresented();
    let border = raster.border();
    let border_unknown = border.iter().filter(|&&c| c == k + 1).count() as f64 / border.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    let pass = known_acc >= 0.95 && novel_acc >= 0.90 && probe_acc >= 0.90 && unrepresented == 0 && secs < 300.0;
    Outcome::new(
        pass,
        format!(
            "known {known_acc:.4} (>= 0.95), novel-train as K+1 {novel_acc:.4} (>= 0.90), \
             probes as K+1 {probe_acc:.4} (>= 0.90), unrepresented cells {unrepresented}, \
             border K+1 {border_unknown:.3}, {secs:.1}s (< 300)"
        ),
    )
}

struct MnistRun {
    f1: f64,
    fashion: f64,
    best_step: Option<usize>,
    secs: f64,
}

fn mnist_run() -> Result<MnistRun, String> {
    let t = Instant::now();
    let d = common::data_dir();
    let need = |p: PathBuf| if p.exists() { Ok(p) } else { Err(format!("missing {}", p.display())) };
    let train_images = need(d.join("mnist/train-images-idx3-ubyte"))?;
    let train_labels = need(d.join("mnist/train-labels-idx1-ubyte"))?;
    let test_images = need(d.join("mnist/t10k-images-idx3-ubyte"))?;
    let test_labels = need(d.join("mnist/t10k-labels-idx1-ubyte"))?;
    let fashion = need(d.join("fashion/t10k-images-idx3-ubyte"))?;
    let seed = 1;
    let k = 2;
    let tr = ImageSet::load(&train_images, Some(&train_labels)).map_err(|e| e.to_string())?;
    let te = ImageSet::load(&test_images, Some(&test_labels)).map_err(|e| e.to_string())?;
    let fa = ImageSet::load(&fashion, None).map_err(|e| e.to_string())?;
    let idx = build_sslac_split(tr.labels.as_ref().unwrap(), &SplitParams::mnist(k, seed)).map_err(|e| e.to_string())?;
    let split = SsLacSplit::from_images(&tr, &te, &idx).map_err(|e| e.to_string())?;
    let mut out = train(&split, &TrainConfig::mnist(k, seed)).map_err(|e| e.to_string())?;
    let foreign = vec![("fashion".to_string(), fa.all_normalized::<f32>())];
    let report = evaluate(&mut out.discriminator, &split, &foreign, seed).map_err(|e| e.to_string())?;
    Ok(MnistRun {
        f1: report.f1_macro,
        fashion: report.open_set_accuracy["fashion"],
        best_step: out.log.best_step,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn mnist_f1(run: &Result<MnistRun, String>) -> Outcome {
    match run {
        Ok(r) => Outcome::new(
            r.f1 >= 0.85 && r.secs <= 7200.0,
            format!("K=2 F1-macro {:.4} (>= 0.85), best step {:?}, {:.0}s (<= 7200)", r.f1, r.best_step, r.secs),
        ),
        Err(e) => Outcome::new(false, e.clone()),
    }
}

fn mnist_open_set(run: &Result<MnistRun, String>) -> Outcome {
    match run {
        Ok(r) => Outcome::new(
            r.fashion >= 0.90,
            format!("fashion test samples as K+1 {:.4} (>= 0.90)", r.fashion),
        ),
        Err(e) => Outcome::new(false, e.clone()),
    }
}

fn grad_checks() -> Outcome {
    let t = Instant::now();
    let cases = common::grad_check_suite();
    let secs = t.elapsed().as_secs_f64();
    let worst = cases
        .iter()
        .max_by(|a, b| (a.report.max_rel_error / a.tolerance).total_cmp(&(b.report.max_rel_error / b.tolerance)))
        .unwrap();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    Outcome::new(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} cases over {} seeds, worst {} at {:.2e} (< {:.0e}), {secs:.1}s (< 60){}",
            cases.len(),
            common::SEEDS,
            worst.name,
            worst.report.max_rel_error,
            worst.tolerance,
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn loss_oracles() -> Outcome {
    const DP6: f64 = 5e-7;
    let w = LossWeights::default();
    let ln2 = 2f64.ln();
    let mut c = Checks::default();

    c.close("generator all zero", generator_loss(&[0.0f64; 4]).unwrap().value, -ln2, DP6);
    c.close("generator +10", generator_loss(&[10.0f64]).unwrap().value, -softplus(10.0), DP6);
    c.stated("generator +10 stated", generator_loss(&[10.0f64]).unwrap().value, "-10.00005");
    c.close("generator -10", generator_loss(&[-10.0f64]).unwrap().value, -softplus(-10.0), DP6);
    c.stated("generator -10 stated", generator_loss(&[-10.0f64]).unwrap().value, "-0.0000454");

    let uniform = Tensor::<f64>::zeros(&[3, 4]);
    let onehot = Tensor::from_vec(&[3, 4], vec![1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]).unwrap();
    let saturated = Tensor::from_vec(&[2, 4], vec![0., 0., 0., 1e4, -3., 2., 0., 1e4]).unwrap();
    let s = supervised_loss(&uniform, &onehot, &saturated, &w).unwrap();
    c.close("supervised uniform labelled", s.labelled_term, 4f64.ln(), DP6);
    c.close("supervised saturated fake", s.fake_term, 0.0, DP6);
    let single = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
    let first = Tensor::from_vec(&[1, 3], vec![1.0f64, 0.0, 0.0]).unwrap();
    let s = supervised_loss(&single, &first, &single, &w).unwrap();
    let by_hand = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 1.0;
    c.close("supervised [1,2,3] class 1", s.labelled_term, by_hand, DP6);
    c.stated("supervised [1,2,3] stated", s.labelled_term, "2.407606");
    let no_fake = LossWeights {
        supervised_fake: 0.0,
        ..w
    };
    let plain = softmax_cross_entropy_with_logits(&single, &first).unwrap().value;
    c.check(
        supervised_loss(&single, &first, &single, &no_fake).unwrap().value == plain,
        "supervised without fake term equals plain cross-entropy",
    );

    let g = gan_discriminator_loss(&[0.0f64; 2], &[0.0; 3], &[0.0; 4], &w).unwrap();
    c.close("gan all zero", g.value, 3.0 * ln2, DP6);
    let winning = gan_discriminator_loss(&[10.0f64], &[-10.0], &[-10.0], &w).unwrap().value;
    c.close("gan winning", winning, 3.0 * softplus(-10.0), DP6);
    c.stated("gan winning stated", winning, "0.000136");
    let swapped = gan_discriminator_loss(&[-10.0f64], &[10.0], &[-10.0], &w).unwrap().value;
    c.check(swapped > winning, format!("swapping U and L raises the loss: {swapped} > {winning}"));

    c.check(total_discriminator_loss(1.0f64, 2.0) == 3.0, "total (1, 2) = 3");
    c.check(total_discriminator_loss(0.0f64, 1.25) == 1.25, "total (0, x) = x");
    c.stated("total (ln 4, 3 ln 2)", total_discriminator_loss(4f64.ln(), 3.0 * ln2), "3.465736");

    for big in [1e4f64, -1e4] {
        let v = [big, -big, big];
        c.check(generator_loss(&v).unwrap().value.is_finite(), format!("generator finite at {big}"));
        c.check(
            gan_discriminator_loss(&v, &v, &v, &w).unwrap().value.is_finite(),
            format!("gan finite at {big}"),
        );
        let logits = Tensor::from_vec(&[1, 3], vec![big, -big, 0.0]).unwrap();
        let s = supervised_loss(&logits, &first, &logits, &w).unwrap();
        c.check(
            s.value.is_finite() && s.grad_labelled.data().iter().all(|g| g.is_finite()),
            format!("supervised finite at {big}"),
        );
        let f32_logits = [big as f32, -big as f32];
        c.check(generator_loss(&f32_logits).unwrap().value.is_finite(), format!("f32 generator finite at {big}"));
    }
    c.outcome()
}

/// Small random planar discriminator with K+1 = 4 outputs.
fn planar_model(seed: u64) -> Sequential<f32> {
    TrainConfig::dummy(seed).architecture.build_discriminator(3, seed).unwrap()
}

fn bias_unknown(model: &mut Sequential<f32>, value: f32) {
    let bias = model.params_mut().iter_mut().filter(|p| p.trainable).last().unwrap();
    let n = bias.value.data().len();
    bias.value.data_mut()[n - 1] = value;
}

fn metric_oracles() -> Outcome {
    let mut c = Checks::default();
    let counts = |cm: &ConfusionMatrix| cm.counts.clone();

    let cm = confusion_matrix(&[1, 2, 2, 3], &[1, 1, 2, 3], 3).unwrap();
    c.check(counts(&cm) == vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]], "confusion [1,1,2,3]");
    c.check(f1_macro(&cm).unwrap() == (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0, "f1 [1,1,2,3] = 7/9");
    c.stated("f1 [1,1,2,3] stated", f1_macro(&cm).unwrap(), "0.7778");

    let truths: Vec<usize> = (1..=3).flat_map(|c| std::iter::repeat_n(c, 10)).collect();
    let perfect = confusion_matrix(&truths, &truths, 3).unwrap();
    c.check(
        (0..3).all(|i| (0..3).all(|j| (perfect.counts[i][j] > 0) == (i == j))),
        "perfect predictions give a diagonal matrix",
    );
    c.check(f1_macro(&perfect).unwrap() == 1.0, "perfect f1 = 1");
    let all_unknown = confusion_matrix(&[3; 30], &truths, 3).unwrap();
    c.check(
        (0..3).all(|i| all_unknown.counts[i][0] == 0 && all_unknown.counts[i][1] == 0),
        "all K+1 predictions fill only the last column",
    );
    let single = confusion_matrix(&[1; 30], &truths, 3).unwrap();
    c.check(f1_macro(&single).unwrap() == 0.5 / 3.0, "single-class predictor f1 = 1/6");
    c.check(confusion_matrix(&[4], &[1], 3).is_err(), "out-of-range class rejected");

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (_, split) = make_dummy_domain(3, 40);
    for seed in 0..5 {
        let mut model = planar_model(seed);
        let n = 400;
        let foreign: Vec<f32> = (0..2 * n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let foreign = Tensor::from_vec(&[n, 2], foreign).unwrap();
        let k = 3;
        let acc = open_set_accuracy(&mut model, &foreign, k).unwrap();
        // known-class samples followed by the foreign rows with truth K+1
        let known = &split.fair_validation;
        let mut preds = predict(&mut model, &known.samples).unwrap();
        let mut truths = known.classes.clone();
        preds.extend(predict(&mut model, &foreign).unwrap());
        truths.extend(std::iter::repeat_n(k + 1, n));
        let cm = confusion_matrix(&preds, &truths, k + 1).unwrap();
        c.check(cm.row_sum(k + 1) == n as u64, "only the appended rows carry truth K+1");
        c.check(
            cm.recall(k + 1) == Some(acc),
            format!("seed {seed}: open-set accuracy {acc} equals K+1 recall {:?}", cm.recall(k + 1)),
        );

        bias_unknown(&mut model, 1e4);
        c.check(open_set_accuracy(&mut model, &foreign, k).unwrap() == 1.0, "always-K+1 model scores 1");
        bias_unknown(&mut model, -1e4);
        c.check(open_set_accuracy(&mut model, &foreign, k).unwrap() == 0.0, "never-K+1 model scores 0");
    }
    c.outcome()
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_open-sslac"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(files_under(&p));
        } else {
            v.push(p);
        }
    }
    v.sort();
    v
}

/// prepare, train and evaluate into `root`.
fn pipeline(config: &Path, root: &Path) -> Result<(), String> {
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let split = s(root.join("prepare/split.toml"));
    let ckpt = s(root.join("train/checkpoint.bin"));
    let config = config.to_str().unwrap();
    run_cli(&["prepare", "--config", config, "--out", &s(root.join("prepare"))])?;
    run_cli(&["train", "--config", config, "--split", &split, "--out", &s(root.join("train"))])?;
    run_cli(&["evaluate", "--checkpoint", &ckpt, "--split", &split, "--out", &s(root.join("evaluate"))])
}

fn determinism_of(name: &str, config_text: &str, c: &mut Checks) -> Result<usize, String> {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    fs::write(&config, config_text).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&config, &a)?;
    pipeline(&config, &b)?;
    let fa = files_under(&a);
    let fb = files_under(&b);
    let rel = |root: &Path, v: &[PathBuf]| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    c.check(rel(&a, &fa) == rel(&b, &fb), format!("{name}: same file set"));
    for (x, y) in fa.iter().zip(&fb) {
        c.check(fs::read(x).unwrap() == fs::read(y).unwrap(), format!("{name}: {} differs", x.display()));
    }
    Ok(fa.len())
}

fn determinism() -> Outcome {
    let mut c = Checks::default();
    let dummy = "[run]\ndomain = \"dummy\"\nk = 3\nseed = 11\n";
    let mut notes = Vec::new();
    match determinism_of("dummy", dummy, &mut c) {
        Ok(n) => notes.push(format!("dummy {n} files")),
        Err(e) => return Outcome::new(false, e),
    }
    let d = common::data_dir();
    let q = |p: &str| format!("{:?}", d.join(p).to_str().unwrap());
    let mnist = format!(
        "[run]\ndomain = \"mnist\"\nk = 2\nseed = 3\n[data]\ntrain_images = {}\ntrain_labels = {}\n\
         test_images = {}\ntest_labels = {}\n[data.foreign]\nfashion = {}\n\
         [train]\nmax_steps = 20\nmin_steps_before_stopping = 0\neval_every = 10\n",
        q("mnist/train-images-idx3-ubyte"),
        q("mnist/train-labels-idx1-ubyte"),
        q("mnist/t10k-images-idx3-ubyte"),
        q("mnist/t10k-labels-idx1-ubyte"),
        q("fashion/t10k-images-idx3-ubyte"),
    );
    match determinism_of("mnist", &mnist, &mut c) {
        Ok(n) => notes.push(format!("mnist {n} files")),
        Err(e) => return Outcome::new(false, e),
    }
    let o = c.outcome();
    Outcome::new(o.pass, format!("{}; {}", notes.join(", "), o.detail))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!("[{}] {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(4, "gradient checks", grad_checks());
    record(5, "loss oracles", loss_oracles());
    record(6, "metric oracles", metric_oracles());
    record(7, "determinism", determinism());
    record(1, "dummy domain end-to-end", dummy_domain());
    let mnist = mnist_run();
    record(2, "MNIST K=2 F1-macro", mnist_f1(&mnist));
    record(3, "MNIST K=2 open set", mnist_open_set(&mnist));

    results.sort_by_key(|r| r.0);
    println!("\nsummary ({:.0}s)", started.elapsed().as_secs_f64());
    for (n, name, o) in &results {
        println!("  {} {n}. {name}", if o.pass { "PASS" } else { "FAIL" });
    }
    if results.iter().any(|r| !r.2.pass) {
        std::process::exit(1);
    }
}
