//! Command-line surface for checkpoint spectral analysis: intruder scans,
//! threshold sweeps, similarity grids, singular-direction scaling, toy
//! training runs, and continual-learning experiments.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 empty result,
//! 4 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intruder_core::checkpoint::{validate_pair, Checkpoint};
use intruder_core::intervention::{apply_plan, select_top_intruders, ScalingPlan};
use intruder_core::lab::{
    continual_run, make_task, pretrain_base, train, write_run_dir, Body, ForgettingProbe,
    SyntheticTask, TaskSpec, TrainMode, TrainerConfig,
};
use intruder_core::spectral::{
    epsilon_sweep, k_sweep, scan_pair, similarity_grid, ModelIntruderReport, ScanConfig,
    DEFAULT_EPSILON, DEFAULT_K,
};
use intruder_core::Error;

#[derive(Parser)]
#[command(name = "intruder", version, about = "Spectral analysis of fine-tuned checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a base/tuned checkpoint pair for intruder dimensions.
    Analyze(AnalyzeArgs),
    /// Model-level intruder totals across an epsilon or k grid.
    Sweep(SweepArgs),
    /// Absolute-cosine similarity grid for one tensor, as CSV.
    Grid(GridArgs),
    /// Scale the top intruder direction in each affected matrix.
    Scale(ScaleArgs),
    /// Train on a synthetic task and write snapshots plus a summary.
    Train(TrainArgs),
    /// Train sequentially on several tasks, evaluating after each stage.
    Continual(ContinualArgs),
    /// Re-emit a saved analysis report as JSON or CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct PairArgs {
    /// Checkpoint stem of the base weights (no extension).
    #[arg(long)]
    base: PathBuf,
    /// Checkpoint stem of the tuned weights (no extension).
    #[arg(long)]
    tuned: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    /// Cosine threshold in (0, 1).
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Number of top tuned singular vectors to examine.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Compare right singular vectors instead of left ones.
    #[arg(long)]
    scan_right: bool,
}

impl ScanArgs {
    fn config(&self) -> Result<ScanConfig, Error> {
        let mut cfg = ScanConfig::new(self.epsilon, self.k)?;
        cfg.scan_right = self.scan_right;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    scan: ScanArgs,
    /// Report destination.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Epsilon grid, strictly increasing, e.g. 0.2,0.4,0.6.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// k grid, strictly increasing, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// k used for an epsilon sweep.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Epsilon used for a k sweep.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Tensor to compare.
    #[arg(long)]
    tensor: String,
    /// Base-side vector count (rows).
    #[arg(long, default_value_t = DEFAULT_K)]
    k0: usize,
    /// Tuned-side vector count (columns).
    #[arg(long, default_value_t = DEFAULT_K)]
    kt: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScaleArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    scan: ScanArgs,
    /// Multiplier for the targeted singular directions.
    #[arg(long, required_unless_present = "plan")]
    lambda: Option<f64>,
    /// Apply an existing plan file instead of scanning.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Output checkpoint stem; the plan is written to `<out>.plan.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long, default_value_t = 101)]
    task_seed: u64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 3.5)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 512)]
    train_n: usize,
    #[arg(long, default_value_t = 256)]
    test_n: usize,
}

impl TaskArgs {
    fn spec(&self, id: String, input_dim: usize, seed: u64) -> TaskSpec {
        TaskSpec {
            id,
            input_dim,
            classes: self.classes,
            train_n: self.train_n,
            test_n: self.test_n,
            seed,
            margin: self.margin,
            noise: self.noise,
        }
    }
}

#[derive(Args, Clone)]
struct TrainerArgs {
    /// full, lora, or lora-freeze-a.
    #[arg(long, default_value = "lora")]
    mode: String,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Adapter scaling; defaults to 2 * rank.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Steps between snapshots; 0 means every 10% of steps.
    #[arg(long, default_value_t = 0)]
    snapshot_interval: usize,
    #[arg(long, default_value_t = 33)]
    seed: u64,
}

impl TrainerArgs {
    fn config(&self) -> Result<TrainerConfig, Error> {
        let mode: TrainMode = self.mode.parse()?;
        let config = TrainerConfig {
            mode,
            rank: self.rank,
            alpha: self.alpha.unwrap_or(2.0 * self.rank as f64),
            lr: self.lr,
            steps: self.steps,
            batch: self.batch,
            snapshot_interval: self.snapshot_interval,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct BaseArgs {
    /// Existing base checkpoint stem; omitted means a base is pre-trained
    /// on the designated proxy task.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    base_seed: u64,
    #[arg(long, default_value_t = 4000)]
    pre_steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pre_lr: f64,
    #[arg(long, default_value_t = 64)]
    input_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
}

impl BaseArgs {
    fn load_or_pretrain(&self) -> Result<Checkpoint, Error> {
        match &self.base {
            Some(stem) => Checkpoint::load(stem),
            None => pretrain_base(
                self.input_dim,
                self.hidden_dim,
                self.base_seed,
                self.pre_steps,
                self.pre_lr,
            ),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    trainer: TrainerArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    /// Run directory for snapshots and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ContinualArgs {
    #[command(flatten)]
    trainer: TrainerArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    /// Number of sequential tasks; task seeds are task_seed + stage.
    #[arg(long, default_value_t = 3)]
    tasks: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report JSON produced by `analyze`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv", value_parser = ["json", "csv"])]
    format: String,
    /// Destination; stdout summary only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Divergence { .. } => ExitCode::from(4),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Scale(args) => cmd_scale(args),
        Command::Train(args) => cmd_train(args),
        Command::Continual(args) => cmd_continual(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_pair(args: &PairArgs) -> Result<intruder_core::checkpoint::CheckpointPair, Error> {
    let base = Checkpoint::load(&args.base)?;
    let tuned = Checkpoint::load(&args.tuned)?;
    validate_pair(base, tuned)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode, Error> {
    let pair = load_pair(&args.pair)?;
    let report = scan_pair(&pair, &args.scan.config()?)?;
    let body = match args.format.as_str() {
        "json" => report.to_json_string(),
        _ => report.to_csv_string(),
    };
    write_atomic(&args.out, body.as_bytes())?;
    println!("total={}", report.total);
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let pair = load_pair(&args.pair)?;
    let (key, rows): (&str, Vec<(String, usize)>) = match (&args.epsilons, &args.ks) {
        (Some(epsilons), None) => {
            let curve = epsilon_sweep(&pair, epsilons, args.k)?;
            (
                "epsilon",
                curve.iter().map(|(e, t)| (e.to_string(), *t)).collect(),
            )
        }
        (None, Some(ks)) => {
            let curve = k_sweep(&pair, ks, args.epsilon)?;
            (
                "k",
                curve.iter().map(|(k, t)| (k.to_string(), *t)).collect(),
            )
        }
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --epsilons or --ks".into(),
            ))
        }
    };
    let body = match args.format.as_str() {
        "json" => {
            let value: Vec<serde_json::Value> = rows
                .iter()
                .map(|(v, t)| serde_json::json!({ key: v, "total": t }))
                .collect();
            let mut s = serde_json::to_string_pretty(&value).expect("rows serialize");
            s.push('\n');
            s
        }
        _ => {
            let mut s = format!("{key},total\n");
            for (v, t) in &rows {
                s.push_str(&format!("{v},{t}\n"));
            }
            s
        }
    };
    write_atomic(&args.out, body.as_bytes())?;
    println!("points={}", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode, Error> {
    let pair = load_pair(&args.pair)?;
    let base = pair
        .base()
        .get(&args.tensor)
        .ok_or_else(|| Error::Mismatch(format!("tensor `{}` not found", args.tensor)))?;
    let tuned = pair.tuned().get(&args.tensor).expect("pair is validated");
    let mut grid = similarity_grid(base, tuned, args.k0, args.kt)?;
    grid.tensor = args.tensor.clone();
    write_atomic(&args.out, grid.to_csv_string().as_bytes())?;
    println!("grid={}x{}", args.k0, args.kt);
    Ok(ExitCode::SUCCESS)
}

fn cmd_scale(args: ScaleArgs) -> Result<ExitCode, Error> {
    let pair = load_pair(&args.pair)?;
    let plan: ScalingPlan = match &args.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Storage {
                path: path.display().to_string(),
                source: e,
            })?;
            ScalingPlan::from_json_str(&text)?
        }
        None => {
            let cfg = args.scan.config()?;
            let report = scan_pair(&pair, &cfg)?;
            let lambda = args.lambda.expect("clap enforces lambda without plan");
            let plan = select_top_intruders(&report, lambda);
            if plan.is_empty() {
                eprintln!("no intruders at (epsilon={}, k={})", cfg.epsilon, cfg.k);
                return Ok(ExitCode::from(3));
            }
            plan
        }
    };
    let edited = apply_plan(pair.tuned(), &plan)?;
    edited.save(&args.out)?;
    let plan_path = args.out.with_file_name(format!(
        "{}.plan.json",
        args.out.file_name().unwrap_or_default().to_string_lossy()
    ));
    write_atomic(&plan_path, plan.to_json_string().as_bytes())?;
    println!("edited={}", plan.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let config = args.trainer.config()?;
    let base = args.base.load_or_pretrain()?;
    let body = Body::from_checkpoint(&base)?;
    let task = make_task(&args.task.spec(
        format!("task{}", args.task.task_seed),
        body.input_dim(),
        args.task.task_seed,
    ))?;
    let probe = ForgettingProbe::designated(&body)?;
    let run = train(&base, &task, &config, Some(&probe))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Storage {
        path: args.out.display().to_string(),
        source: e,
    })?;
    base.save(&args.out.join("base"))?;
    let summary = write_run_dir(&run, &args.out)?;
    println!(
        "accuracy={} forgetting={}",
        summary.final_accuracy,
        summary
            .forgetting
            .map(|f| f.to_string())
            .unwrap_or_else(|| "none".into())
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_continual(args: ContinualArgs) -> Result<ExitCode, Error> {
    if args.tasks == 0 {
        return Err(Error::InvalidInput("need at least one task".into()));
    }
    let config = args.trainer.config()?;
    let scan = ScanConfig::new(args.epsilon, args.k)?;
    let base = args.base.load_or_pretrain()?;
    let body = Body::from_checkpoint(&base)?;
    let tasks: Vec<SyntheticTask> = (0..args.tasks)
        .map(|stage| {
            let seed = args.task.task_seed + stage as u64;
            make_task(&args.task.spec(format!("task{seed}"), body.input_dim(), seed))
        })
        .collect::<Result<_, _>>()?;
    let probe = ForgettingProbe::designated(&body)?;
    let stages = continual_run(&base, &tasks, &config, &scan, Some(&probe))?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Storage {
        path: args.out.display().to_string(),
        source: e,
    })?;
    base.save(&args.out.join("base"))?;

    let mut matrix_csv = String::from("stage");
    for task in &tasks {
        matrix_csv.push_str(&format!(",{}", task.spec.id));
    }
    matrix_csv.push('\n');
    let mut stage_rows = Vec::new();
    for stage in &stages {
        stage
            .checkpoint
            .save(&args.out.join(format!("stage_{}", stage.stage)))?;
        matrix_csv.push_str(&stage.stage.to_string());
        for acc in &stage.accuracies {
            matrix_csv.push_str(&format!(",{acc}"));
        }
        matrix_csv.push('\n');
        stage_rows.push(serde_json::json!({
            "stage": stage.stage,
            "intruder_total": stage.intruder_total,
            "accuracies": stage.accuracies,
            "forgetting": stage.forgetting,
        }));
    }
    write_atomic(&args.out.join("accuracy_matrix.csv"), matrix_csv.as_bytes())?;
    let mut stages_json = serde_json::to_string_pretty(&stage_rows).expect("stage rows serialize");
    stages_json.push('\n');
    write_atomic(&args.out.join("stages.json"), stages_json.as_bytes())?;

    let final_total = stages.last().map(|s| s.intruder_total).unwrap_or(0);
    println!("stages={} final_total={final_total}", stages.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::Storage {
        path: args.input.display().to_string(),
        source: e,
    })?;
    let report: ModelIntruderReport = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("unreadable report: {e}")))?;
    let body = match args.format.as_str() {
        "json" => report.to_json_string(),
        _ => report.to_csv_string(),
    };
    if let Some(out) = &args.out {
        write_atomic(out, body.as_bytes())?;
    } else {
        print!("{body}");
    }
    println!("total={}", report.total);
    Ok(ExitCode::SUCCESS)
}

/// Write-temp-then-rename so readers never observe partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Storage {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
