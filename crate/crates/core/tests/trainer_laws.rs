//! Exactness checks for the two update rules: analytic gradients against
//! central finite differences, the closed-form relation between the first
//! adapter step and the first full step, and the low-rank structure of
//! merged adapter updates.

use intruder_core::lab::{
    full_step, lora_step, make_task, train, Batch, Body, FullModel, LoraModel, SyntheticTask,
    TaskSpec, TrainMode, TrainerConfig,
};
use intruder_core::tensor::{effective_rank, svd, Matrix, SeededRng};

fn micro_task(seed: u64) -> SyntheticTask {
    make_task(&TaskSpec {
        id: "micro".into(),
        input_dim: 2,
        classes: 3,
        train_n: 12,
        test_n: 6,
        seed,
        margin: 2.0,
        noise: 0.7,
    })
    .unwrap()
}

fn relative_gap(analytic: &Matrix, fd: &Matrix) -> f64 {
    let denom = fd.frobenius_norm();
    if denom < 1e-12 {
        return analytic.frobenius_norm();
    }
    analytic.sub(fd).frobenius_norm() / denom
}

/// Central finite differences of `loss` over every entry of one matrix,
/// accessed through getter/setter closures.
fn fd_matrix(
    rows: usize,
    cols: usize,
    mut read: impl FnMut() -> Matrix,
    mut write: impl FnMut(Matrix),
    mut loss: impl FnMut() -> f64,
) -> Matrix {
    let h = 1e-5;
    let mut grad = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let original = read();
            let mut plus = original.clone();
            plus.set(i, j, original.get(i, j) + h);
            write(plus);
            let up = loss();
            let mut minus = original.clone();
            minus.set(i, j, original.get(i, j) - h);
            write(minus);
            let down = loss();
            write(original);
            grad.set(i, j, (up - down) / (2.0 * h));
        }
    }
    grad
}

/// Smallest absolute pre-activation near a reachable ReLU kink; finite
/// differences are only trustworthy away from those. Second-layer
/// pre-activations are exactly zero wherever the first layer is fully dead;
/// those are flat under small perturbations, not kinks, so they are skipped.
fn relu_margin(w1: &Matrix, w2: &Matrix, batch: &Batch) -> f64 {
    let a1 = w1.matmul(&batch.inputs);
    let z1 = a1.map(|x| x.max(0.0));
    let a2 = w2.matmul(&z1);
    let mut margin = a1
        .data()
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x.abs()));
    for j in 0..z1.cols() {
        let live = (0..z1.rows()).any(|i| z1.get(i, j) > 0.0);
        if live {
            for i in 0..a2.rows() {
                margin = margin.min(a2.get(i, j).abs());
            }
        }
    }
    margin
}

#[test]
fn full_gradients_match_central_differences_on_six_parameter_model() {
    // 6 trainable parameters: w1 is 1x2, w2 is 1x1, head is 3x1.
    let task = micro_task(3);
    let batch = task.train.gather(&(0..8).collect::<Vec<_>>());
    let mut rng = SeededRng::new(41);
    let mut model = FullModel::new(Body::random(2, 1, &mut rng), 3);
    model.head = rng.normal_matrix(3, 1, 0.8);
    assert!(
        relu_margin(&model.body.w1, &model.body.w2, &batch) > 1e-3,
        "fixture too close to a ReLU kink"
    );

    let (_, grads) = model.gradients(&batch);
    assert!(grads.w1.frobenius_norm() > 1e-6);
    assert!(grads.w2.frobenius_norm() > 1e-6);
    assert!(grads.head.frobenius_norm() > 1e-6);

    let cell = std::cell::RefCell::new(model);
    let fd_w1 = fd_matrix(
        1,
        2,
        || cell.borrow().body.w1.clone(),
        |m| cell.borrow_mut().body.w1 = m,
        || cell.borrow().loss(&batch),
    );
    let fd_w2 = fd_matrix(
        1,
        1,
        || cell.borrow().body.w2.clone(),
        |m| cell.borrow_mut().body.w2 = m,
        || cell.borrow().loss(&batch),
    );
    let fd_head = fd_matrix(
        3,
        1,
        || cell.borrow().head.clone(),
        |m| cell.borrow_mut().head = m,
        || cell.borrow().loss(&batch),
    );

    assert!(relative_gap(&grads.w1, &fd_w1) <= 1e-5);
    assert!(relative_gap(&grads.w2, &fd_w2) <= 1e-5);
    assert!(relative_gap(&grads.head, &fd_head) <= 1e-5);
}

#[test]
fn lora_gradients_match_central_differences_on_micro_model() {
    let task = micro_task(5);
    let batch = task.train.gather(&(0..8).collect::<Vec<_>>());
    let mut rng = SeededRng::new(49);
    let mut model = LoraModel::new(Body::random(2, 1, &mut rng), 3, 1, 2.0, false, &mut rng).unwrap();
    // nonzero factors so every gradient is informative
    model.adapter_mut(0).set_b(rng.normal_matrix(1, 1, 0.5)).unwrap();
    model.adapter_mut(1).set_b(rng.normal_matrix(1, 1, 0.5)).unwrap();
    model.head = rng.normal_matrix(3, 1, 0.8);
    {
        let merged = model.merged_body();
        assert!(relu_margin(&merged.w1, &merged.w2, &batch) > 1e-3);
    }

    let (_, grads) = model.gradients(&batch);
    // a dead micro-network would make every check below vacuous
    assert!(grads.b1.frobenius_norm() > 1e-6);
    assert!(grads.a1.frobenius_norm() > 1e-6);
    assert!(grads.b2.frobenius_norm() > 1e-6);
    assert!(grads.head.frobenius_norm() > 1e-6);

    let cell = std::cell::RefCell::new(model);
    let loss = || cell.borrow().loss(&batch);
    let analytic = [
        (&grads.b1, 0, true, 1, 1),
        (&grads.a1, 0, false, 1, 2),
        (&grads.b2, 1, true, 1, 1),
        (&grads.a2, 1, false, 1, 1),
    ];
    for (grad, adapter, is_b, rows, cols) in analytic {
        let fd = fd_matrix(
            rows,
            cols,
            || {
                let m = cell.borrow();
                let a = m.adapter(adapter);
                if is_b { a.b().clone() } else { a.a().clone() }
            },
            |m| {
                let mut model = cell.borrow_mut();
                let a = model.adapter_mut(adapter);
                if is_b {
                    a.set_b(m).unwrap();
                } else {
                    a.set_a(m).unwrap();
                }
            },
            loss,
        );
        assert!(
            relative_gap(grad, &fd) <= 1e-5,
            "adapter {adapter} {} gradient off",
            if is_b { "b" } else { "a" }
        );
    }
    let fd_head = fd_matrix(
        3,
        1,
        || cell.borrow().head.clone(),
        |m| cell.borrow_mut().head = m,
        loss,
    );
    assert!(relative_gap(&grads.head, &fd_head) <= 1e-5);
}

fn wide_task(seed: u64) -> SyntheticTask {
    make_task(&TaskSpec {
        id: "wide".into(),
        input_dim: 64,
        classes: 4,
        train_n: 64,
        test_n: 32,
        seed,
        margin: 3.0,
        noise: 1.0,
    })
    .unwrap()
}

#[test]
fn first_adapter_step_factors_through_the_full_update() {
    let task = wide_task(7);
    let batch = task.train.gather(&(0..32).collect::<Vec<_>>());
    let lr = 0.05;

    for rank in [1usize, 4, 16] {
        for alpha in [8.0, 2.0 * rank as f64] {
            let mut rng = SeededRng::new(900 + rank as u64);
            let base = Body::random(64, 64, &mut rng);
            let head = rng.normal_matrix(4, 64, 0.4);

            let mut full = FullModel::new(base.clone(), 4);
            full.head = head.clone();
            let mut lora = LoraModel::new(base.clone(), 4, rank, alpha, false, &mut rng).unwrap();
            lora.head = head;

            let a0 = [lora.adapter(0).a().clone(), lora.adapter(1).a().clone()];
            full_step(&mut full, &batch, lr).unwrap();
            lora_step(&mut lora, &batch, lr).unwrap();

            let merged = lora.merged_body();
            let scale = (alpha / rank as f64).powi(2);
            for (index, (base_w, full_w, merged_w)) in [
                (&base.w1, &full.body.w1, &merged.w1),
                (&base.w2, &full.body.w2, &merged.w2),
            ]
            .into_iter()
            .enumerate()
            {
                let delta_full = full_w.sub(base_w);
                let update = merged_w.sub(base_w);
                let projected = delta_full
                    .matmul_nt(&a0[index])
                    .matmul(&a0[index])
                    .scale(scale);
                let gap = update.sub(&projected).frobenius_norm() / projected.frobenius_norm();
                assert!(
                    gap <= 1e-10,
                    "rank {rank} alpha {alpha} layer {index}: gap {gap}"
                );
                assert!(
                    rows_lie_in_rowspace(&update, &a0[index]) <= 1e-8,
                    "rank {rank} alpha {alpha} layer {index}: rowspace residual"
                );
            }
        }
    }
}

/// Relative Frobenius residual of projecting `update`'s rows onto the row
/// space of `a0`, via the normal equations of the projector.
fn rows_lie_in_rowspace(update: &Matrix, a0: &Matrix) -> f64 {
    let r = a0.rows();
    let gram = a0.matmul_nt(a0);
    let gram_na = nalgebra::DMatrix::from_fn(r, r, |i, j| gram.get(i, j));
    let inv = gram_na.try_inverse().expect("gaussian rows are independent");
    let inv_m = Matrix::from_fn(r, r, |i, j| inv[(i, j)]);
    // P = a0^T (a0 a0^T)^{-1} a0; residual = update - update P
    let projected = update.matmul_nt(a0).matmul(&inv_m).matmul(a0);
    update.sub(&projected).frobenius_norm() / update.frobenius_norm()
}

#[test]
fn merged_update_stays_rank_bounded_across_a_run() {
    let task = wide_task(11);
    let mut rng = SeededRng::new(31);
    let base = Body::random(64, 64, &mut rng).to_checkpoint();
    for rank in [1usize, 3] {
        let config = TrainerConfig {
            mode: TrainMode::Lora,
            rank,
            alpha: 2.0 * rank as f64,
            lr: 0.05,
            steps: 300,
            batch: 16,
            snapshot_interval: 100,
            seed: 19,
        };
        let run = train(&base, &task, &config, None).unwrap();
        let base_body = Body::from_checkpoint(&base).unwrap();
        for (step, ckpt) in &run.snapshots {
            let body = Body::from_checkpoint(ckpt).unwrap();
            for update in [body.w1.sub(&base_body.w1), body.w2.sub(&base_body.w2)] {
                let values = svd(&update).unwrap().values;
                if values[0] == 0.0 {
                    continue; // step-0 snapshot: nothing merged yet
                }
                assert!(
                    values[rank] <= 1e-8 * values[0],
                    "step {step}: sigma_{{r+1}} leaked"
                );
                let er = effective_rank(&values).unwrap();
                assert!(er <= rank as f64 + 1e-6, "step {step}: effective rank {er}");
            }
        }
    }
}
