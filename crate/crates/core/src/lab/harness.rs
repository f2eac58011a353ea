use crate::checkpoint::{validate_pair, Checkpoint};
use crate::error::{Error, Result};
use crate::lab::model::{accuracy, fit_head, mean_loss, Body, HeadFitConfig};
use crate::lab::task::{make_task, SyntheticTask, TaskSpec};
use crate::lab::trainer::{train, TrainerConfig, TrainMode};
use crate::spectral::{scan_pair, ScanConfig};
use crate::tensor::{derive_seed, SeededRng};

/// Seed of the designated pre-training proxy task.
pub const PROXY_SEED: u64 = 0xF0A6;

/// The designated held-out proxy task used to measure forgetting: a fixed
/// recipe, varied only by the body's input width.
pub fn proxy_task_spec(input_dim: usize) -> TaskSpec {
    TaskSpec {
        id: "proxy".into(),
        input_dim,
        classes: 16,
        train_n: 2048,
        test_n: 512,
        seed: PROXY_SEED,
        margin: 4.0,
        noise: 1.0,
    }
}

/// Forgetting probe: a proxy task with a head fitted once on the base body
/// and frozen thereafter. Forgetting of a later body is its cross-entropy on
/// the proxy test split through that frozen head.
#[derive(Debug, Clone)]
pub struct ForgettingProbe {
    task: SyntheticTask,
    head: crate::tensor::Matrix,
    baseline: f64,
    body_shape: (usize, usize),
}

impl ForgettingProbe {
    /// Fits the proxy head on `base_body` and records the baseline loss.
    pub fn new(base_body: &Body, task: SyntheticTask) -> Result<Self> {
        if task.spec.input_dim != base_body.input_dim() {
            return Err(Error::Mismatch(format!(
                "proxy task input_dim {} does not match body input_dim {}",
                task.spec.input_dim,
                base_body.input_dim()
            )));
        }
        let head = fit_head(
            base_body,
            &task.train,
            task.spec.classes,
            &HeadFitConfig::default(),
        );
        let baseline = mean_loss(base_body, &head, &task.test);
        Ok(Self {
            task,
            head,
            baseline,
            body_shape: (base_body.hidden_dim(), base_body.input_dim()),
        })
    }

    /// Probe for the designated proxy task of a given base body.
    pub fn designated(base_body: &Body) -> Result<Self> {
        let task = make_task(&proxy_task_spec(base_body.input_dim()))?;
        Self::new(base_body, task)
    }

    /// Proxy loss of the base body itself.
    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    /// Proxy test loss of `body` under the frozen base-fitted head.
    pub fn measure_body(&self, body: &Body) -> Result<f64> {
        if (body.hidden_dim(), body.input_dim()) != self.body_shape {
            return Err(Error::Mismatch(format!(
                "body shape {}x{} does not match probe shape {}x{}",
                body.hidden_dim(),
                body.input_dim(),
                self.body_shape.0,
                self.body_shape.1
            )));
        }
        Ok(mean_loss(body, &self.head, &self.task.test))
    }
}

/// Proxy test loss of a snapshot checkpoint under the probe's frozen head.
pub fn measure_forgetting(snapshot: &Checkpoint, probe: &ForgettingProbe) -> Result<f64> {
    let body = Body::from_checkpoint(snapshot)?;
    probe.measure_body(&body)
}

/// Test accuracy of a checkpointed body on a task, with the task head
/// retrained from scratch on the frozen body.
pub fn evaluate_with_retrained_head(ckpt: &Checkpoint, task: &SyntheticTask) -> Result<f64> {
    let body = Body::from_checkpoint(ckpt)?;
    let head = fit_head(
        &body,
        &task.train,
        task.spec.classes,
        &HeadFitConfig::default(),
    );
    Ok(accuracy(&body, &head, &task.test))
}

/// Constructs a pre-trained base: a randomly initialized body trained with
/// full updates on the designated proxy task.
pub fn pretrain_base(
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
    steps: usize,
    lr: f64,
) -> Result<Checkpoint> {
    let proxy = make_task(&proxy_task_spec(input_dim))?;
    let mut rng = SeededRng::new(derive_seed(seed, 0xBA5E));
    let body = Body::random(input_dim, hidden_dim, &mut rng);
    let config = TrainerConfig {
        mode: TrainMode::Full,
        rank: 1,
        alpha: 1.0,
        lr,
        steps,
        batch: 32,
        snapshot_interval: 0,
        seed,
    };
    let run = train(&body.to_checkpoint(), &proxy, &config, None)?;
    let mut base = run.final_checkpoint().clone();
    base.set_metadata("role", "pretrained-base");
    Ok(base)
}

/// Outcome of one continual-learning stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: usize,
    /// Merged body after training on this stage's task.
    pub checkpoint: Checkpoint,
    /// Accuracy on every task in the sequence, head retrained per task.
    pub accuracies: Vec<f64>,
    /// Intruder total of this checkpoint against the original base.
    pub intruder_total: usize,
    /// Proxy forgetting of this checkpoint, when a probe was supplied.
    pub forgetting: Option<f64>,
}

/// Sequential fine-tuning: train on each task in order, merging adapters
/// into the running body between tasks (full updates carry the body
/// forward directly). After each stage every task is evaluated with a
/// retrained head, and the body is scanned for intruders against the
/// original base.
pub fn continual_run(
    base: &Checkpoint,
    tasks: &[SyntheticTask],
    config: &TrainerConfig,
    scan: &ScanConfig,
    probe: Option<&ForgettingProbe>,
) -> Result<Vec<StageResult>> {
    if tasks.is_empty() {
        return Err(Error::invalid("no tasks to train on"));
    }
    config.validate()?;
    scan.validate()?;

    let mut current = base.clone();
    let mut stages = Vec::with_capacity(tasks.len());
    for (stage, task) in tasks.iter().enumerate() {
        let stage_config = TrainerConfig {
            seed: derive_seed(config.seed, 1000 + stage as u64),
            ..config.clone()
        };
        let run = train(&current, task, &stage_config, probe)?;
        current = run.final_checkpoint().clone();

        let mut accuracies = Vec::with_capacity(tasks.len());
        for eval_task in tasks {
            accuracies.push(evaluate_with_retrained_head(&current, eval_task)?);
        }
        let pair = validate_pair(base.clone(), current.clone())?;
        let report = scan_pair(&pair, scan)?;

        stages.push(StageResult {
            stage,
            checkpoint: current.clone(),
            accuracies,
            intruder_total: report.total,
            forgetting: run.forgetting,
        });
    }
    Ok(stages)
}
