//! End-to-end flows of the training harness: the forgetting probe, base
//! pre-training, and sequential multi-task runs.

use intruder_core::lab::{
    continual_run, evaluate_with_retrained_head, make_task, measure_forgetting, pretrain_base,
    proxy_task_spec, train, Body, ForgettingProbe, SyntheticTask, TaskSpec, TrainMode,
    TrainerConfig,
};
use intruder_core::spectral::ScanConfig;
use intruder_core::tensor::{derive_seed, SeededRng};

fn downstream_task(seed: u64) -> SyntheticTask {
    make_task(&TaskSpec {
        id: format!("down{seed}"),
        input_dim: 32,
        classes: 4,
        train_n: 256,
        test_n: 128,
        seed,
        margin: 3.0,
        noise: 1.0,
    })
    .unwrap()
}

fn quick_config(mode: TrainMode, seed: u64) -> TrainerConfig {
    TrainerConfig {
        mode,
        rank: 2,
        alpha: 4.0,
        lr: 0.05,
        steps: 150,
        batch: 32,
        snapshot_interval: 0,
        seed,
    }
}

#[test]
fn probe_baseline_is_exact_on_the_base_body() {
    let mut rng = SeededRng::new(2);
    let body = Body::random(32, 32, &mut rng);
    let probe = ForgettingProbe::new(&body, make_task(&proxy_task_spec(32)).unwrap()).unwrap();
    let measured = measure_forgetting(&body.to_checkpoint(), &probe).unwrap();
    assert_eq!(measured.to_bits(), probe.baseline().to_bits());
    assert!(measured >= 0.0);
}

#[test]
fn probe_rejects_mismatched_bodies() {
    let mut rng = SeededRng::new(3);
    let body = Body::random(32, 32, &mut rng);
    let probe = ForgettingProbe::new(&body, make_task(&proxy_task_spec(32)).unwrap()).unwrap();
    let other = Body::random(32, 16, &mut rng);
    assert!(probe.measure_body(&other).is_err());
}

#[test]
fn training_on_a_fresh_task_does_not_reduce_proxy_loss() {
    let base = pretrain_base(32, 32, 21, 600, 0.05).unwrap();
    let base_body = Body::from_checkpoint(&base).unwrap();
    let probe = ForgettingProbe::designated(&base_body).unwrap();
    let task = downstream_task(91);
    let run = train(&base, &task, &quick_config(TrainMode::Full, 5), Some(&probe)).unwrap();
    let forgetting = run.forgetting.unwrap();
    assert!(forgetting >= 0.0);
    assert!(
        forgetting >= probe.baseline(),
        "forgetting {forgetting} < baseline {}",
        probe.baseline()
    );
}

#[test]
fn pretraining_beats_a_random_body_on_the_proxy_task() {
    let base = pretrain_base(32, 32, 23, 600, 0.05).unwrap();
    let proxy = make_task(&proxy_task_spec(32)).unwrap();
    let trained_acc = evaluate_with_retrained_head(&base, &proxy).unwrap();
    let mut rng = SeededRng::new(99);
    let random_acc =
        evaluate_with_retrained_head(&Body::random(32, 32, &mut rng).to_checkpoint(), &proxy)
            .unwrap();
    assert!(
        trained_acc > random_acc,
        "pretrained {trained_acc} vs random {random_acc}"
    );
    assert!(trained_acc >= 0.8, "pretrained accuracy {trained_acc}");
}

#[test]
fn single_task_continual_run_reduces_to_train_plus_evaluate() {
    let base = pretrain_base(32, 32, 25, 400, 0.05).unwrap();
    let task = downstream_task(95);
    let config = quick_config(TrainMode::Lora, 7);
    let scan = ScanConfig::default();

    let stages = continual_run(&base, std::slice::from_ref(&task), &config, &scan, None).unwrap();
    assert_eq!(stages.len(), 1);

    let stage_config = TrainerConfig {
        seed: derive_seed(config.seed, 1000),
        ..config
    };
    let direct = train(&base, &task, &stage_config, None).unwrap();
    assert_eq!(&stages[0].checkpoint, direct.final_checkpoint());
    let direct_acc = evaluate_with_retrained_head(direct.final_checkpoint(), &task).unwrap();
    assert_eq!(stages[0].accuracies[0].to_bits(), direct_acc.to_bits());
}

#[test]
fn continual_stages_report_one_accuracy_per_task() {
    let base = pretrain_base(32, 32, 27, 400, 0.05).unwrap();
    let tasks = vec![downstream_task(101), downstream_task(102)];
    let config = quick_config(TrainMode::Full, 9);
    let stages = continual_run(&base, &tasks, &config, &ScanConfig::default(), None).unwrap();
    assert_eq!(stages.len(), 2);
    for (i, stage) in stages.iter().enumerate() {
        assert_eq!(stage.stage, i);
        assert_eq!(stage.accuracies.len(), 2);
        assert!(stage.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    assert!(continual_run(&base, &[], &config, &ScanConfig::default(), None).is_err());
}

/// Closed-form ridge probe on raw inputs: W = Y X^T (X X^T + eps I)^{-1}.
/// Verifies the generator's separability claim independently of any
/// trained body or head machinery.
#[test]
fn easy_two_class_task_is_separable_by_a_least_squares_probe() {
    let task = make_task(&TaskSpec {
        id: "easy".into(),
        input_dim: 24,
        classes: 2,
        train_n: 200,
        test_n: 200,
        seed: 8,
        margin: 8.0,
        noise: 0.5,
    })
    .unwrap();

    let n = task.train.inputs.rows();
    let count = task.train.len();
    let x = nalgebra::DMatrix::from_fn(n, count, |i, j| task.train.inputs.get(i, j));
    let y = nalgebra::DMatrix::from_fn(2, count, |c, j| {
        if task.train.labels[j] == c {
            1.0
        } else {
            0.0
        }
    });
    let gram = &x * x.transpose() + nalgebra::DMatrix::identity(n, n) * 1e-6;
    let inv = gram.try_inverse().expect("regularized gram is invertible");
    let probe = &y * x.transpose() * inv;

    let mut correct = 0;
    for j in 0..task.test.len() {
        let sample = nalgebra::DVector::from_fn(n, |i, _| task.test.inputs.get(i, j));
        let logits = &probe * sample;
        let pred = if logits[0] >= logits[1] { 0 } else { 1 };
        if pred == task.test.labels[j] {
            correct += 1;
        }
    }
    let acc = correct as f64 / task.test.len() as f64;
    assert!(acc >= 0.99, "probe accuracy {acc}");
}
