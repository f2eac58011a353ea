use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::intervention::LoraAdapter;
use crate::lab::harness::ForgettingProbe;
use crate::lab::model::{accuracy, backward, fit_head, forward, Body, Gradients, HeadFitConfig};
use crate::lab::task::{Batch, SyntheticTask};
use crate::tensor::{derive_seed, Matrix, SeededRng};

/// Which update rule trains the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Every body matrix is updated directly.
    Full,
    /// Low-rank adapters train over a frozen base; `b` starts at zero,
    /// `a` from an isotropic Gaussian.
    Lora,
    /// Like `Lora`, but `a` is frozen at an orthonormal-row initialization
    /// (all its singular values exactly 1) and only `b` trains.
    LoraFreezeA,
}

impl TrainMode {
    pub fn is_lora(self) -> bool {
        matches!(self, TrainMode::Lora | TrainMode::LoraFreezeA)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TrainMode::Full),
            "lora" => Ok(TrainMode::Lora),
            "lora-freeze-a" => Ok(TrainMode::LoraFreezeA),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected full, lora, or lora-freeze-a)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    pub rank: usize,
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Steps between snapshots; 0 means every 10% of `steps`.
    pub snapshot_interval: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode.is_lora() && self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1 for lora modes"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    fn effective_interval(&self) -> usize {
        if self.snapshot_interval > 0 {
            self.snapshot_interval
        } else {
            (self.steps / 10).max(1)
        }
    }
}

/// Fully trainable model: body plus active head.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub body: Body,
    pub head: Matrix,
}

impl FullModel {
    pub fn new(body: Body, classes: usize) -> Self {
        let head = Matrix::zeros(classes, body.hidden_dim());
        Self { body, head }
    }

    pub fn loss(&self, batch: &Batch) -> f64 {
        forward(&self.body.w1, &self.body.w2, &self.head, batch).loss
    }

    pub fn gradients(&self, batch: &Batch) -> (f64, Gradients) {
        let pass = forward(&self.body.w1, &self.body.w2, &self.head, batch);
        let grads = backward(&self.body.w2, &self.head, batch, &pass);
        (pass.loss, grads)
    }
}

/// Frozen base with one adapter per body matrix plus a trainable head.
#[derive(Debug, Clone)]
pub struct LoraModel {
    base: Body,
    /// Adapters for `w1` and `w2`, in that order.
    adapters: [LoraAdapter; 2],
    pub head: Matrix,
    freeze_a: bool,
}

/// Gradients with respect to the adapter factors and head.
#[derive(Debug, Clone)]
pub struct LoraGradients {
    pub b1: Matrix,
    pub a1: Matrix,
    pub b2: Matrix,
    pub a2: Matrix,
    pub head: Matrix,
}

impl LoraModel {
    /// Attaches fresh adapters to every body matrix: `b = 0` and `a` drawn
    /// from an isotropic Gaussian with standard deviation `1/sqrt(fan_in)`,
    /// or Gram-Schmidt-orthonormalized rows when `freeze_a` is set.
    pub fn new(
        base: Body,
        classes: usize,
        rank: usize,
        alpha: f64,
        freeze_a: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let head = Matrix::zeros(classes, base.hidden_dim());
        let make_adapter = |rows: usize, cols: usize, rng: &mut SeededRng| -> Result<LoraAdapter> {
            let b = Matrix::zeros(rows, rank);
            let gaussian = rng.normal_matrix(rank, cols, 1.0 / (cols as f64).sqrt());
            let a = if freeze_a {
                orthonormalize_rows(&gaussian, rng)
            } else {
                gaussian
            };
            LoraAdapter::new(b, a, alpha)
        };
        let a1 = make_adapter(base.hidden_dim(), base.input_dim(), rng)?;
        let a2 = make_adapter(base.hidden_dim(), base.hidden_dim(), rng)?;
        Ok(Self {
            base,
            adapters: [a1, a2],
            head,
            freeze_a,
        })
    }

    pub fn base(&self) -> &Body {
        &self.base
    }

    pub fn adapter(&self, index: usize) -> &LoraAdapter {
        &self.adapters[index]
    }

    pub fn adapter_mut(&mut self, index: usize) -> &mut LoraAdapter {
        &mut self.adapters[index]
    }

    pub fn freeze_a(&self) -> bool {
        self.freeze_a
    }

    /// Base plus merged adapter updates.
    pub fn merged_body(&self) -> Body {
        Body {
            w1: self.base.w1.add(&self.adapters[0].update()),
            w2: self.base.w2.add(&self.adapters[1].update()),
        }
    }

    pub fn loss(&self, batch: &Batch) -> f64 {
        let merged = self.merged_body();
        forward(&merged.w1, &merged.w2, &self.head, batch).loss
    }

    /// Loss and adapter-factor gradients at the current parameters.
    pub fn gradients(&self, batch: &Batch) -> (f64, LoraGradients) {
        let merged = self.merged_body();
        let pass = forward(&merged.w1, &merged.w2, &self.head, batch);
        let grads = backward(&merged.w2, &self.head, batch, &pass);
        let s1 = self.adapters[0].scaling();
        let s2 = self.adapters[1].scaling();
        (
            pass.loss,
            LoraGradients {
                b1: grads.w1.matmul_nt(self.adapters[0].a()).scale(s1),
                a1: self.adapters[0].b().matmul_tn(&grads.w1).scale(s1),
                b2: grads.w2.matmul_nt(self.adapters[1].a()).scale(s2),
                a2: self.adapters[1].b().matmul_tn(&grads.w2).scale(s2),
                head: grads.head,
            },
        )
    }
}

/// Modified Gram-Schmidt on rows; retries with fresh Gaussian rows in the
/// measure-zero degenerate case.
fn orthonormalize_rows(a: &Matrix, rng: &mut SeededRng) -> Matrix {
    let (r, n) = (a.rows(), a.cols());
    let mut rows: Vec<Vec<f64>> = (0..r).map(|i| a.row(i).to_vec()).collect();
    for i in 0..r {
        loop {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y).sum();
                for k in 0..n {
                    rows[i][k] -= dot * rows[j][k];
                }
            }
            let norm: f64 = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-10 {
                for x in rows[i].iter_mut() {
                    *x /= norm;
                }
                break;
            }
            rows[i] = rng.normal_vec(n, 1.0);
        }
    }
    Matrix::from_rows(&rows).expect("orthonormal rows are finite")
}

/// One plain gradient-descent step on every body matrix and the head.
pub fn full_step(model: &mut FullModel, batch: &Batch, lr: f64) -> Result<f64> {
    let (loss, grads) = model.gradients(batch);
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    model.body.w1.add_scaled_inplace(&grads.w1, -lr);
    model.body.w2.add_scaled_inplace(&grads.w2, -lr);
    model.head.add_scaled_inplace(&grads.head, -lr);
    Ok(loss)
}

/// One adapter step: `b` and `a` move simultaneously using gradients taken
/// at the pre-step values; the base never changes. In freeze-`a` mode only
/// `b` moves. The head trains directly in both cases.
pub fn lora_step(model: &mut LoraModel, batch: &Batch, lr: f64) -> Result<f64> {
    let (loss, grads) = model.gradients(batch);
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let freeze_a = model.freeze_a;
    for (index, (gb, ga)) in [(&grads.b1, &grads.a1), (&grads.b2, &grads.a2)]
        .into_iter()
        .enumerate()
    {
        let adapter = model.adapter_mut(index);
        let new_b = adapter.b().add_scaled(gb, -lr);
        adapter.set_b(new_b).expect("gradient preserves shape");
        if !freeze_a {
            let new_a = adapter.a().add_scaled(ga, -lr);
            adapter.set_a(new_a).expect("gradient preserves shape");
        }
    }
    model.head.add_scaled_inplace(&grads.head, -lr);
    Ok(loss)
}

/// A completed training trajectory.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub config: TrainerConfig,
    pub task_id: String,
    pub per_step_loss: Vec<f64>,
    /// `(step, merged body checkpoint)` at step 0, every snapshot interval,
    /// and the final step.
    pub snapshots: Vec<(u64, Checkpoint)>,
    /// Test accuracy of the final body under a freshly fitted head.
    pub final_accuracy: f64,
    /// Loss on the forgetting probe, when one was supplied.
    pub forgetting: Option<f64>,
}

impl ToyRun {
    pub fn final_body(&self) -> Body {
        let (_, ckpt) = self.snapshots.last().expect("at least the step-0 snapshot");
        Body::from_checkpoint(ckpt).expect("snapshots hold body tensors")
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        &self.snapshots.last().expect("at least the step-0 snapshot").1
    }
}

/// Trains on `task` starting from the body stored in `base`.
///
/// Deterministic for a given config: adapter initialization and batch
/// selection consume independent streams derived from `config.seed`, so
/// full and lora runs with the same seed see identical batch sequences.
/// Snapshots hold merged body weights only. Evaluation fits a fresh head
/// on the final body, mirroring how checkpoints are probed elsewhere.
pub fn train(
    base: &Checkpoint,
    task: &SyntheticTask,
    config: &TrainerConfig,
    probe: Option<&ForgettingProbe>,
) -> Result<ToyRun> {
    config.validate()?;
    let body = Body::from_checkpoint(base)?;
    if body.input_dim() != task.spec.input_dim {
        return Err(Error::Mismatch(format!(
            "body expects input_dim {}, task `{}` provides {}",
            body.input_dim(),
            task.spec.id,
            task.spec.input_dim
        )));
    }

    let mut init_rng = SeededRng::new(derive_seed(config.seed, 1));
    let mut batch_rng = SeededRng::new(derive_seed(config.seed, 2));
    let interval = config.effective_interval();
    let classes = task.spec.classes;

    enum Trainee {
        Full(FullModel),
        Lora(LoraModel),
    }

    let mut trainee = match config.mode {
        TrainMode::Full => Trainee::Full(FullModel::new(body, classes)),
        TrainMode::Lora | TrainMode::LoraFreezeA => Trainee::Lora(LoraModel::new(
            body,
            classes,
            config.rank,
            config.alpha,
            config.mode == TrainMode::LoraFreezeA,
            &mut init_rng,
        )?),
    };

    let current_body = |t: &Trainee| -> Body {
        match t {
            Trainee::Full(m) => m.body.clone(),
            Trainee::Lora(m) => m.merged_body(),
        }
    };

    let make_snapshot = |t: &Trainee, step: u64| -> (u64, Checkpoint) {
        let mut ckpt = current_body(t).to_checkpoint();
        ckpt.set_metadata("step", step.to_string());
        ckpt.set_metadata("task", task.spec.id.clone());
        ckpt.set_metadata("seed", config.seed.to_string());
        ckpt.set_metadata(
            "mode",
            match config.mode {
                TrainMode::Full => "full",
                TrainMode::Lora => "lora",
                TrainMode::LoraFreezeA => "lora-freeze-a",
            },
        );
        (step, ckpt)
    };

    let mut snapshots = vec![make_snapshot(&trainee, 0)];
    let mut per_step_loss = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let indices = batch_rng.indices(task.train.len(), config.batch);
        let batch = task.train.gather(&indices);
        let loss = match &mut trainee {
            Trainee::Full(m) => full_step(m, &batch, config.lr),
            Trainee::Lora(m) => lora_step(m, &batch, config.lr),
        }
        .map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step },
            other => other,
        })?;
        per_step_loss.push(loss);
        let done = step + 1;
        if done % interval == 0 || done == config.steps {
            snapshots.push(make_snapshot(&trainee, done as u64));
        }
    }

    let final_body = current_body(&trainee);
    let eval_head = fit_head(&final_body, &task.train, classes, &HeadFitConfig::default());
    let final_accuracy = accuracy(&final_body, &eval_head, &task.test);
    let forgetting = probe.map(|p| p.measure_body(&final_body)).transpose()?;
    if let Some(f) = forgetting {
        if !f.is_finite() {
            return Err(Error::Divergence { step: config.steps });
        }
    }

    Ok(ToyRun {
        config: config.clone(),
        task_id: task.spec.id.clone(),
        per_step_loss,
        snapshots,
        final_accuracy,
        forgetting,
    })
}

/// On-disk run summary, written next to the snapshot files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainerConfig,
    pub final_accuracy: f64,
    pub forgetting: Option<f64>,
    pub per_step_loss: Vec<f64>,
    /// Checkpoint stems relative to the run directory.
    pub snapshot_paths: Vec<String>,
}

/// Writes snapshots and `summary.json` into `dir`, creating it if needed.
pub fn write_run_dir(run: &ToyRun, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir.display().to_string(), e))?;
    let mut snapshot_paths = Vec::with_capacity(run.snapshots.len());
    for (step, ckpt) in &run.snapshots {
        let stem = format!("snapshot_{step:06}");
        ckpt.save(&dir.join(&stem))?;
        snapshot_paths.push(stem);
    }
    let summary = RunSummary {
        config: run.config.clone(),
        final_accuracy: run.final_accuracy,
        forgetting: run.forgetting,
        per_step_loss: run.per_step_loss.clone(),
        snapshot_paths,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    let path = dir.join("summary.json");
    std::fs::write(&path, json).map_err(|e| Error::storage(path.display().to_string(), e))?;
    Ok(summary)
}
