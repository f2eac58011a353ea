//! Scratch harness for picking trainer hyperparameters: prints accuracy,
//! intruder counts, spectra, intervention effects, and continual trends for
//! candidate settings.
//!
//! Usage: explore <probe> key=value ...
//! keys: pre_steps pre_lr classes margin lr_full lr_lora1 lr_lora4 steps seed

use std::collections::HashMap;

use intruder_core::checkpoint::validate_pair;
use intruder_core::intervention::{apply_plan, select_top_intruders};
use intruder_core::lab::{
    continual_run, evaluate_with_retrained_head, make_task, measure_forgetting, pretrain_base,
    train, Body, ForgettingProbe, SyntheticTask, TaskSpec, TrainMode, TrainerConfig,
};
use intruder_core::spectral::{correlate, scan_pair, ScanConfig};
use intruder_core::tensor::svd;

struct Params(HashMap<String, f64>);

impl Params {
    fn get(&self, key: &str, default: f64) -> f64 {
        *self.0.get(key).unwrap_or(&default)
    }
}

fn scan_against(
    base: &intruder_core::checkpoint::Checkpoint,
    tuned: &intruder_core::checkpoint::Checkpoint,
) -> intruder_core::spectral::ModelIntruderReport {
    let pair = validate_pair(base.clone(), tuned.clone()).unwrap();
    scan_pair(&pair, &ScanConfig::default()).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let which = args.first().cloned().unwrap_or_else(|| "trend".into());
    let params = Params(
        args.iter()
            .skip(1)
            .filter_map(|a| {
                let (k, v) = a.split_once('=')?;
                Some((k.to_string(), v.parse().ok()?))
            })
            .collect(),
    );

    let pre_steps = params.get("pre_steps", 4000.0) as usize;
    let pre_lr = params.get("pre_lr", 0.05);
    let classes = params.get("classes", 4.0) as usize;
    let margin = params.get("margin", 3.0);
    let steps = params.get("steps", 2000.0) as usize;
    let seed = params.get("seed", 33.0) as u64;
    let task_seed = params.get("task_seed", 101.0) as u64;

    println!("== pretraining base (steps {pre_steps}, lr {pre_lr}) ==");
    let base = pretrain_base(64, 64, 11, pre_steps, pre_lr).unwrap();
    let base_body = Body::from_checkpoint(&base).unwrap();
    let probe = ForgettingProbe::designated(&base_body).unwrap();
    let proxy = probe.task().clone();
    let proxy_acc = evaluate_with_retrained_head(&base, &proxy).unwrap();
    let spectrum = svd(&base_body.w2).unwrap().values;
    println!(
        "base proxy acc {proxy_acc:.3} baseline loss {:.4}",
        probe.baseline()
    );
    println!(
        "base w2 spectrum: s0 {:.3} s4 {:.3} s9 {:.3} s20 {:.3} s63 {:.4}",
        spectrum[0], spectrum[4], spectrum[9], spectrum[20], spectrum[63]
    );

    let down = make_task(&TaskSpec {
        id: "down".into(),
        input_dim: 64,
        classes,
        train_n: 512,
        test_n: 256,
        seed: task_seed,
        margin,
        noise: 1.0,
    })
    .unwrap();
    let base_acc = evaluate_with_retrained_head(&base, &down).unwrap();
    println!("base head-retrained accuracy on downstream: {base_acc:.3}");

    let mk = |mode: TrainMode, rank: usize, lr: f64, seed: u64| TrainerConfig {
        mode,
        rank,
        alpha: 2.0 * rank as f64,
        lr,
        steps,
        batch: 32,
        snapshot_interval: 0,
        seed,
    };

    match which.as_str() {
        "trend" => {
            let lr_full = params.get("lr_full", 0.02);
            let lr_lora1 = params.get("lr_lora1", 0.1);
            let lr_lora4 = params.get("lr_lora4", lr_lora1 / 4.0);
            let lr_lora16 = params.get("lr_lora16", lr_lora1 / 16.0);
            for (label, mode, rank, lr) in [
                ("full", TrainMode::Full, 1usize, lr_full),
                ("lora r1", TrainMode::Lora, 1, lr_lora1),
                ("lora r4", TrainMode::Lora, 4, lr_lora4),
                ("lora r16", TrainMode::Lora, 16, lr_lora16),
            ] {
                match train(&base, &down, &mk(mode, rank, lr, seed), Some(&probe)) {
                    Ok(run) => {
                        let report = scan_against(&base, run.final_checkpoint());
                        let per: Vec<String> = report
                            .matrices
                            .iter()
                            .map(|m| {
                                format!(
                                    "{}:{}{:?}",
                                    m.tensor,
                                    m.n_intruders,
                                    m.intruders
                                        .iter()
                                        .map(|h| format!("r{}σ{:.2}c{:.2}", h.rank, h.sigma, h.max_cos))
                                        .collect::<Vec<_>>()
                                )
                            })
                            .collect();
                        println!(
                            "{label:8} lr {lr:<7.4} acc {:.3} forget {:.4} total {} {:?}",
                            run.final_accuracy,
                            run.forgetting.unwrap(),
                            report.total,
                            per
                        );
                    }
                    Err(e) => println!("{label:8} lr {lr:<7.4} FAILED: {e}"),
                }
            }
        }
        "sigma" => {
            let lr = params.get("lr_lora1", 0.1);
            let run = train(&base, &down, &mk(TrainMode::Lora, 1, lr, seed), Some(&probe)).unwrap();
            println!("acc {:.3}", run.final_accuracy);
            for (step, ckpt) in &run.snapshots {
                let r = scan_against(&base, ckpt);
                let tops: Vec<String> = r
                    .matrices
                    .iter()
                    .map(|m| {
                        m.intruders
                            .first()
                            .map(|h| format!("{}@r{}σ{:.2}", m.tensor, h.rank, h.sigma))
                            .unwrap_or_else(|| format!("{}:-", m.tensor))
                    })
                    .collect();
                println!("step {step:5} total {} {:?}", r.total, tops);
            }
        }
        "scale" => {
            let lr = params.get("lr_lora1", 0.1);
            let run = train(&base, &down, &mk(TrainMode::Lora, 1, lr, seed), Some(&probe)).unwrap();
            let tuned = run.final_checkpoint();
            let report = scan_against(&base, tuned);
            let acc_un = evaluate_with_retrained_head(tuned, &down).unwrap();
            let forget_un = measure_forgetting(tuned, &probe).unwrap();
            println!(
                "unedited: acc {acc_un:.4} forget {forget_un:.4} baseline {:.4} total {}",
                probe.baseline(),
                report.total
            );
            for lambda in [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0] {
                let plan = select_top_intruders(&report, lambda);
                let edited = apply_plan(tuned, &plan).unwrap();
                let acc = evaluate_with_retrained_head(&edited, &down).unwrap();
                let forget = measure_forgetting(&edited, &probe).unwrap();
                let rel_f = (forget - forget_un) / forget_un;
                let rel_a = (acc - acc_un) / acc_un;
                println!(
                    "lambda {lambda:4}: acc {acc:.4} ({rel_a:+.5}) forget {forget:.4} ({rel_f:+.5})"
                );
            }
        }
        "continual" => {
            let lr_full = params.get("lr_full", 0.02);
            let lr_lora1 = params.get("lr_lora1", 0.1);
            let tasks: Vec<SyntheticTask> = (0..3)
                .map(|i| {
                    make_task(&TaskSpec {
                        id: format!("ct{i}"),
                        input_dim: 64,
                        classes,
                        train_n: 512,
                        test_n: 256,
                        seed: 201 + i as u64,
                        margin,
                        noise: 1.0,
                    })
                    .unwrap()
                })
                .collect();
            for (label, mode, rank, lr) in [
                ("full", TrainMode::Full, 1, lr_full),
                ("lora r1", TrainMode::Lora, 1, lr_lora1),
            ] {
                let stages = continual_run(
                    &base,
                    &tasks,
                    &mk(mode, rank, lr, 55),
                    &ScanConfig::default(),
                    Some(&probe),
                )
                .unwrap();
                for s in &stages {
                    println!(
                        "{label:8} stage {} intruders {:3} acc {:?}",
                        s.stage,
                        s.intruder_total,
                        s.accuracies
                            .iter()
                            .map(|a| format!("{a:.3}"))
                            .collect::<Vec<_>>()
                    );
                }
            }
        }
        "sweep" => {
            let mut totals = Vec::new();
            let mut forgets = Vec::new();
            for (si, sd) in [41u64, 42, 43].into_iter().enumerate() {
                for lr in [0.003, 0.01, 0.03, 0.1] {
                    let run = train(&base, &down, &mk(TrainMode::Lora, 1, lr, sd), Some(&probe))
                        .unwrap();
                    let report = scan_against(&base, run.final_checkpoint());
                    println!(
                        "seed {si} lr {lr:5}: acc {:.3} forget {:.4} intruders {}",
                        run.final_accuracy,
                        run.forgetting.unwrap(),
                        report.total
                    );
                    totals.push(report.total);
                    forgets.push(run.forgetting.unwrap());
                }
            }
            println!("rho = {:?}", correlate(&totals, &forgets));
        }
        other => println!("unknown probe `{other}`"),
    }
}
