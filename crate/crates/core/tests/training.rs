use open_sslac::dataset::make_dummy_domain;
use open_sslac::nn::Checkpoint;
use open_sslac::trainer::{
    checkpoint_of, fair_validation_accuracy, restore, run_experiment, train, StopReason,
    TrainConfig, TrainError,
};

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_steps: 300,
        min_steps_before_stopping: 100,
        eval_every: 25,
        patience: 10_000,
        ..TrainConfig::dummy(seed)
    }
}

#[test]
fn dummy_domain_two_thousand_finite_steps() {
    let (_, split) = make_dummy_domain(2, 100);
    let config = TrainConfig {
        max_steps: 2000,
        patience: usize::MAX,
        ..TrainConfig::dummy(2)
    };
    let out = train(&split, &config).unwrap();
    assert_eq!(out.log.records.len(), 2000);
    assert_eq!(out.log.stop_reason, Some(StopReason::MaxSteps));
    for r in &out.log.records {
        assert!(r.generator_loss.is_finite() && r.discriminator_supervised.is_finite());
        assert!(r.discriminator_gan.is_finite());
    }
    assert!(out.log.records.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn returned_model_is_the_best_retained_evaluation() {
    let (_, split) = make_dummy_domain(3, 60);
    let config = short_config(3);
    let mut out = train(&split, &config).unwrap();
    let acc = fair_validation_accuracy(&mut out.discriminator, &split.fair_validation).unwrap();
    assert_eq!(Some(acc), out.log.best_accuracy);
    let best_step = out.log.best_step.unwrap();
    assert!(best_step >= config.min_steps_before_stopping);
    for (step, a) in out.log.evaluations() {
        if step >= config.min_steps_before_stopping {
            assert!(acc >= a, "step {step}: {a} > returned {acc}");
        }
    }
}

#[test]
fn identical_seed_identical_log_and_no_test_access() {
    let (_, split) = make_dummy_domain(4, 40);
    let config = short_config(4);
    let a = train(&split, &config).unwrap();
    let b = train(&split, &config).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(split.test_reads(), 0);
    let c = train(&split, &short_config(5)).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoint_round_trip_reproduces_accuracy() {
    let (_, split) = make_dummy_domain(6, 40);
    let config = short_config(6);
    let mut out = train(&split, &config).unwrap();
    let before = fair_validation_accuracy(&mut out.discriminator, &split.fair_validation).unwrap();
    let bytes = checkpoint_of(&out, &config).to_bytes();
    let (restored_config, _, mut disc) = restore(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored_config, config);
    let after = fair_validation_accuracy(&mut disc, &split.fair_validation).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
    let probes = &split.fair_validation.samples;
    assert_eq!(
        out.discriminator.forward(probes, false).unwrap(),
        disc.forward(probes, false).unwrap()
    );
}

#[test]
fn divergence_reports_the_step() {
    let (_, split) = make_dummy_domain(7, 40);
    let config = TrainConfig {
        learning_rate: 1e30,
        ..short_config(7)
    };
    match train(&split, &config) {
        Err(TrainError::Divergence { step, log }) => {
            assert_eq!(log.records.last().unwrap().step, step);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mismatched_k_is_rejected() {
    let (_, split) = make_dummy_domain(8, 40);
    let config = TrainConfig {
        k: 2,
        ..short_config(8)
    };
    assert!(matches!(train(&split, &config), Err(TrainError::Config(_))));
}

#[test]
fn experiment_aggregates_over_runs() {
    let config = TrainConfig {
        max_steps: 120,
        min_steps_before_stopping: 50,
        ..short_config(11)
    };
    let make = |seed| Ok(make_dummy_domain(seed, 30).1);
    let one = run_experiment(1, &config, make, &[]).unwrap();
    assert_eq!(one.failures, 0);
    assert!(one.f1_macro.unwrap().std.is_none());

    let two = run_experiment(2, &config, make, &[]).unwrap();
    assert_eq!(two.runs.len(), 2);
    assert_ne!(two.runs[0].seed, two.runs[1].seed);
    assert!(two.f1_macro.unwrap().std.is_some());
    assert_eq!(two.runs[0].seed, one.runs[0].seed);
}

#[test]
fn experiment_records_failed_runs() {
    let config = TrainConfig {
        max_steps: 60,
        min_steps_before_stopping: 50,
        ..short_config(12)
    };
    let mut calls = 0;
    let make = |seed| {
        calls += 1;
        if calls == 2 {
            Err(TrainError::Config("no data".into()))
        } else {
            Ok(make_dummy_domain(seed, 30).1)
        }
    };
    let r = run_experiment(3, &config, make, &[]).unwrap();
    assert_eq!(r.failures, 1);
    assert_eq!(r.f1_macro.unwrap().n, 2);
    assert!(r.runs[1].error.as_deref().unwrap().contains("no data"));
}
