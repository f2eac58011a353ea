//! Deterministic desk-scale training lab: synthetic classification tasks, a
//! two-layer ReLU body trained with either full gradient descent or low-rank
//! adapters (exact plain-GD update rules, no momentum), plus forgetting and
//! continual-learning harnesses.

mod harness;
mod model;
mod task;
mod trainer;

pub use harness::{
    continual_run, evaluate_with_retrained_head, measure_forgetting, pretrain_base,
    proxy_task_spec, ForgettingProbe, StageResult, PROXY_SEED,
};
pub use model::{accuracy, fit_head, mean_loss, Body, Gradients, HeadFitConfig};
pub use task::{make_task, Batch, Dataset, SyntheticTask, TaskSpec};
pub use trainer::{
    full_step, lora_step, train, write_run_dir, FullModel, LoraGradients, LoraModel, RunSummary,
    ToyRun, TrainMode, TrainerConfig,
};
