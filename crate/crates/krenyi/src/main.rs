//! Command-line entry point: single training runs, full experiments,
//! stand-alone entropy/MI estimation, self tests, and report re-rendering.

use clap::{Args, Parser, Subcommand};
use krenyi::experiment::{self, ExperimentConfig, PartitionMode, TaskKind};
use krenyi::kernel::{self, KernelSpec};
use krenyi::train::{self, Algorithm};
use krenyi::{report, selftest, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "krenyi",
    about = "Kernelized Renyi information estimators and SGD/SGLD generalization-bound experiments",
    version
)]
struct Cli {
    /// Worker threads (overrides the KRENYI_WORKERS environment variable;
    /// default: one per available processor).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single training run and optionally save its trajectory.
    Train(TrainArgs),
    /// Run the full multi-run experiment and write reports.
    Experiment(ExperimentArgs),
    /// Estimate entropy or (conditional) mutual information from a samples file.
    Estimate(EstimateArgs),
    /// Run the built-in oracle and property checks.
    Selftest,
    /// Re-render reports from a saved experiment directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; missing fields take the task defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task preset used when no config file is given.
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    kernel_quantile: Option<f64>,
    #[arg(long)]
    apply_normalizer: Option<bool>,
    #[arg(long, value_parser = parse_partition)]
    partition: Option<PartitionMode>,
    #[arg(long)]
    mi_epoch_stride: Option<usize>,
    #[arg(long)]
    virtual_sigma2: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    shared_init: Option<bool>,
    #[arg(long)]
    mnist_images: Option<PathBuf>,
    #[arg(long)]
    mnist_labels: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "synthetic" => Ok(TaskKind::Synthetic),
        "synthetic-class" => Ok(TaskKind::SyntheticClass),
        "mnist" => Ok(TaskKind::Mnist),
        other => Err(format!(
            "unknown task {other:?} (expected synthetic, synthetic-class, or mnist)"
        )),
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s {
        "sgd" => Ok(Algorithm::Sgd),
        "sgld" => Ok(Algorithm::Sgld),
        other => Err(format!("unknown algorithm {other:?} (expected sgd or sgld)")),
    }
}

fn parse_partition(s: &str) -> Result<PartitionMode, String> {
    match s {
        "full" => Ok(PartitionMode::Full),
        "per_layer" => Ok(PartitionMode::PerLayer),
        "per_param" => Ok(PartitionMode::PerParam),
        other => Err(format!(
            "unknown partition mode {other:?} (expected full, per_layer, or per_param)"
        )),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("bad config json: {e}")))?
            }
            None => match self.task.unwrap_or(TaskKind::Synthetic) {
                TaskKind::Synthetic => ExperimentConfig::synthetic_default(),
                TaskKind::SyntheticClass => ExperimentConfig::random_label_default(),
                TaskKind::Mnist => ExperimentConfig::mnist_default(),
            },
        };
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.eta {
            cfg.train.eta = v;
        }
        if let Some(v) = self.sigma2 {
            cfg.train.sigma2 = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.algorithm {
            cfg.train.algorithm = v;
        }
        if let Some(v) = self.label_noise {
            cfg.label_noise = v;
        }
        if let Some(v) = self.kernel_quantile {
            cfg.kernel_quantile = v;
        }
        if let Some(v) = self.apply_normalizer {
            cfg.apply_normalizer = v;
        }
        if let Some(v) = self.partition {
            cfg.partition_mode = v;
        }
        if let Some(v) = self.mi_epoch_stride {
            cfg.mi_epoch_stride = v;
        }
        if let Some(v) = self.virtual_sigma2 {
            cfg.virtual_sigma2 = v;
        }
        if let Some(v) = self.n_train {
            cfg.n_train = v;
        }
        if let Some(v) = self.n_test {
            cfg.n_test = v;
        }
        if let Some(v) = self.hidden_width {
            cfg.hidden_width = v;
        }
        if let Some(v) = self.record_every {
            cfg.train.record_every = v;
        }
        if let Some(v) = self.shared_init {
            cfg.shared_init = v;
        }
        if let Some(v) = &self.mnist_images {
            cfg.mnist_images = Some(v.clone());
        }
        if let Some(v) = &self.mnist_labels {
            cfg.mnist_labels = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run index used to derive this run's seeds.
    #[arg(long, default_value_t = 0)]
    run_index: usize,
    /// Where to write the trajectory binary (plus its .json sidecar).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for reports, trajectories, and meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// JSON file with {"x": [[..]], "y": [[..]]?, "z": [[..]]?}.
    #[arg(long)]
    input: PathBuf,
    /// Explicit kernel width (default: top-quantile distance heuristic).
    #[arg(long)]
    width: Option<f64>,
    #[arg(long, default_value_t = kernel::DEFAULT_WIDTH_QUANTILE)]
    quantile: f64,
    /// Use the box kernel instead of the Gaussian one.
    #[arg(long)]
    box_kernel: bool,
    /// Multiply by the kernel normalizer C_kappa.
    #[arg(long)]
    normalizer: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved experiment directory (meta.json + trajectories/).
    #[arg(long)]
    dir: PathBuf,
    /// Output directory for the re-rendered reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(serde::Deserialize)]
struct EstimateInput {
    x: Vec<Vec<f64>>,
    #[serde(default)]
    y: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    z: Option<Vec<Vec<f64>>>,
}

fn kernel_for(samples: &[Vec<f64>], args: &EstimateArgs) -> Result<KernelSpec, Error> {
    let dim = samples
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidInput("empty sample set".into()))?;
    let width = match args.width {
        Some(w) => w,
        None => kernel::select_width(samples, args.quantile)?,
    };
    if args.box_kernel {
        KernelSpec::box_kernel(width, dim)
    } else {
        KernelSpec::gaussian(width, dim)
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.input)?;
    let input: EstimateInput = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("bad samples json: {e}")))?;
    let kx = kernel_for(&input.x, args)?;
    let out = match (&input.y, &input.z) {
        (None, None) => {
            let est = kernel::entropy_estimate(&input.x, &kx, args.normalizer)?;
            serde_json::json!({
                "entropy": est.value,
                "m": est.m,
                "normalizer_applied": est.log_normalizer_applied,
                "concentration_radius_at_95": est.concentration_radius_at_95,
                "kernel_width": kx.width,
            })
        }
        (Some(y), None) => {
            let ky = kernel_for(y, args)?;
            let mi = kernel::mi_estimate(&input.x, y, &kx, &ky, args.normalizer)?;
            serde_json::json!({
                "mi": mi,
                "m": input.x.len(),
                "kernel_width_x": kx.width,
                "kernel_width_y": ky.width,
            })
        }
        (Some(y), Some(z)) => {
            let ky = kernel_for(y, args)?;
            let kz = kernel_for(z, args)?;
            let cmi =
                kernel::cond_mi_estimate(&input.x, y, z, &kx, &ky, &kz, args.normalizer)?;
            serde_json::json!({
                "cond_mi": cmi,
                "m": input.x.len(),
            })
        }
        (None, Some(_)) => {
            return Err(Error::InvalidInput(
                "conditional estimation needs both y and z".into(),
            ))
        }
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let mut single = cfg.clone();
    single.runs = 2; // validation floor; only one run is executed
    single.validate()?;
    let run = experiment::execute_run(&single, args.run_index)?;
    let traj = &run.trajectory;
    println!(
        "run {} finished: {} steps, dim {}",
        args.run_index,
        traj.total_steps(),
        traj.dim
    );
    if let (Some(first), Some(last)) = (
        traj.train_loss_per_epoch.first(),
        traj.train_loss_per_epoch.last(),
    ) {
        println!("train loss: {first} -> {last}");
    }
    if let Some(last) = traj.test_loss_per_epoch.last() {
        println!("test loss:  {last}");
    }
    if let Some(out) = &args.out {
        train::save_trajectory(traj, out)?;
        println!("trajectory written to {}", out.display());
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let result = experiment::orchestrate(&cfg)?;
    result.report.validate()?;
    let files = report::save_experiment(&cfg, &result, &args.out)?;
    println!(
        "experiment complete: {} of {} runs effective, {} report rows",
        result.report.effective_runs,
        result.report.requested_runs,
        result.report.rows.len()
    );
    if let Some(row) = result.report.rows.last() {
        println!(
            "final epoch {}: true_gap {:.6}, theta_c_sum {:.6}, theta_v_sum {:.6}",
            row.epoch, row.true_gap, row.theta_c_sum, row.theta_v_sum
        );
        if let (Some(iws), Some(iwbw)) = (row.iws, row.iwbw) {
            println!("             iws {iws:.6}, iwbw {iwbw:.6}");
        }
    }
    println!("wrote {} files under {}", files.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Error> {
    let result = report::rerender_experiment(&args.dir, &args.out)?;
    println!(
        "re-rendered {} rows from {} trajectories into {}",
        result.report.rows.len(),
        result.report.effective_runs,
        args.out.display()
    );
    Ok(())
}

fn cmd_selftest() -> ExitCode {
    let outcomes = selftest::run_all();
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("PASS {}", o.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {} ({e})", o.name);
            }
        }
    }
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("KRENYI_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set worker count: {e}");
        }
    }
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Selftest => return cmd_selftest(),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
