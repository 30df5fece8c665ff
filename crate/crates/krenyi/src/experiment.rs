//! Multi-run experiment orchestration: repeated independent trainings with
//! derived seeds, cross-run gradient-covariance averaging, kernelized MI
//! curves (IWS and the cumulative IWB|W), the sub-gaussian loss range, and
//! assembly of the per-epoch bound report.
//!
//! Runs execute on parallel workers in chunks; all cross-run reductions fold
//! in run-index order, so results are identical for any worker count.

use crate::bounds::{self, BoundReport, EpochRow};
use crate::data::{self, Dataset, SyntheticClassification, SyntheticRegression};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelSpec};
use crate::matrix::{self, SymMatrix};
use crate::nn::{self, LossKind, MlpModel};
use crate::train::{self, seeds, Algorithm, TrainConfig, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Synthetic,
    SyntheticClass,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Full,
    PerLayer,
    PerParam,
}

fn default_runs() -> usize {
    100
}
fn default_quantile() -> f64 {
    kernel::DEFAULT_WIDTH_QUANTILE
}
fn default_mi_stride() -> usize {
    1
}
fn default_probes() -> usize {
    64
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub train: TrainConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Probability of replacing each training label by a uniform class draw.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_quantile")]
    pub kernel_quantile: f64,
    /// Multiply entropy estimates by C_kappa. Off by default: the multi-term
    /// MI combinations are numerically fragile under the huge normalizers of
    /// high-dimensional kernels, and raw mode preserves nonnegativity.
    #[serde(default)]
    pub apply_normalizer: bool,
    pub partition_mode: PartitionMode,
    /// Epoch stride for MI recording and report rows; 0 disables MI.
    #[serde(default = "default_mi_stride")]
    pub mi_epoch_stride: usize,
    /// Noise variance of the SGD auxiliary process and of the SGD bounds.
    #[serde(default)]
    pub virtual_sigma2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub hidden_width: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub num_classes: usize,
    /// Noise std of the synthetic regression targets.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_probes")]
    pub hessian_probes: usize,
    /// Share one seeded initialization across runs (the iterates' W_0 is a
    /// fixed vector, not a random object).
    #[serde(default = "default_true")]
    pub shared_init: bool,
    #[serde(default)]
    pub mnist_images: Option<PathBuf>,
    #[serde(default)]
    pub mnist_labels: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Synthetic regression defaults: eta 0.001, n 100, 50 epochs, batch 10,
    /// sigma2 1e-3, 100 runs.
    pub fn synthetic_default() -> Self {
        ExperimentConfig {
            task: TaskKind::Synthetic,
            train: TrainConfig {
                algorithm: Algorithm::Sgld,
                eta: 0.001,
                sigma2: 1e-3,
                epochs: 50,
                batch_size: 10,
                seed: 777,
                record_every: 1,
                record_grads: false,
            },
            runs: 100,
            label_noise: 0.0,
            kernel_quantile: 0.15,
            apply_normalizer: false,
            partition_mode: PartitionMode::PerLayer,
            mi_epoch_stride: 1,
            virtual_sigma2: 1e-3,
            n_train: 100,
            n_test: 100,
            hidden_width: 10,
            input_dim: 10,
            num_classes: 0,
            noise_std: 0.1,
            hessian_probes: 64,
            shared_init: true,
            mnist_images: None,
            mnist_labels: None,
        }
    }

    /// MNIST defaults: eta 0.01, n 5000, 100 epochs, batch 50, sigma2 1e-5,
    /// hidden width 128.
    pub fn mnist_default() -> Self {
        ExperimentConfig {
            task: TaskKind::Mnist,
            train: TrainConfig {
                algorithm: Algorithm::Sgld,
                eta: 0.01,
                sigma2: 1e-5,
                epochs: 100,
                batch_size: 50,
                seed: 777,
                record_every: 0,
                record_grads: false,
            },
            runs: 100,
            label_noise: 0.0,
            kernel_quantile: 0.15,
            apply_normalizer: false,
            partition_mode: PartitionMode::PerParam,
            mi_epoch_stride: 5,
            virtual_sigma2: 1e-5,
            n_train: 5000,
            n_test: 5000,
            hidden_width: 128,
            input_dim: 28 * 28,
            num_classes: 10,
            noise_std: 0.0,
            hessian_probes: 64,
            shared_init: true,
            mnist_images: None,
            mnist_labels: None,
        }
    }

    /// Random-label surrogate defaults: SGD with a virtual-noise auxiliary
    /// process on a teacher-labelled classification task.
    pub fn random_label_default() -> Self {
        ExperimentConfig {
            task: TaskKind::SyntheticClass,
            train: TrainConfig {
                algorithm: Algorithm::Sgd,
                eta: 0.05,
                sigma2: 0.0,
                epochs: 15,
                batch_size: 25,
                seed: 777,
                record_every: 0,
                record_grads: false,
            },
            runs: 20,
            label_noise: 0.0,
            kernel_quantile: 0.15,
            apply_normalizer: false,
            partition_mode: PartitionMode::PerParam,
            mi_epoch_stride: 0,
            virtual_sigma2: 1e-3,
            n_train: 1000,
            n_test: 1000,
            hidden_width: 48,
            input_dim: 10,
            num_classes: 4,
            noise_std: 0.0,
            hessian_probes: 64,
            shared_init: true,
            mnist_images: None,
            mnist_labels: None,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.task {
            TaskKind::Synthetic => LossKind::Mse,
            TaskKind::SyntheticClass | TaskKind::Mnist => LossKind::SoftmaxCrossEntropy,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let out = match self.task {
            TaskKind::Synthetic => 1,
            TaskKind::SyntheticClass => self.num_classes,
            TaskKind::Mnist => 10,
        };
        vec![self.input_dim, self.hidden_width, out]
    }

    /// Noise variance entering the bound terms: the injected one for SGLD,
    /// the virtual one for SGD.
    pub fn bound_sigma2(&self) -> f64 {
        match self.train.algorithm {
            Algorithm::Sgld => self.train.sigma2,
            Algorithm::Sgd => self.virtual_sigma2,
        }
    }

    pub fn param_count(&self) -> usize {
        MlpModel::zeros(&self.layer_sizes()).param_count()
    }

    fn partition(&self, model: &MlpModel) -> Vec<Vec<usize>> {
        let d = model.param_count();
        match self.partition_mode {
            PartitionMode::Full => vec![(0..d).collect()],
            PartitionMode::PerLayer => model
                .layer_groups()
                .into_iter()
                .map(|r| r.collect())
                .collect(),
            PartitionMode::PerParam => (0..d).map(|i| vec![i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::InvalidInput("need at least 2 runs".into()));
        }
        if self.input_dim == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidInput("zero model dimensions".into()));
        }
        if matches!(self.task, TaskKind::SyntheticClass) && self.num_classes < 2 {
            return Err(Error::InvalidInput("need at least 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::DomainError("label_noise must be in [0, 1]".into()));
        }
        if self.train.algorithm == Algorithm::Sgd && !(self.virtual_sigma2 > 0.0) {
            return Err(Error::InvalidInput(
                "sgd bounds need virtual_sigma2 > 0".into(),
            ));
        }
        self.train.validate(self.n_train)?;

        // accumulator feasibility: per-step covariance curves are held in
        // memory across all steps
        let d = self.param_count();
        let t = self.train.total_steps(self.n_train);
        let model = MlpModel::zeros(&self.layer_sizes());
        let sq_cells: usize = match self.partition_mode {
            PartitionMode::Full => {
                if d > bounds::MAX_DENSE_COV_DIM {
                    return Err(Error::TooLarge {
                        dim: d,
                        max: bounds::MAX_DENSE_COV_DIM,
                    });
                }
                d * d
            }
            PartitionMode::PerLayer => {
                let groups = model.layer_groups();
                if let Some(g) = groups.iter().find(|g| g.len() > bounds::MAX_DENSE_COV_DIM) {
                    return Err(Error::TooLarge {
                        dim: g.len(),
                        max: bounds::MAX_DENSE_COV_DIM,
                    });
                }
                groups.iter().map(|g| g.len() * g.len()).sum()
            }
            PartitionMode::PerParam => d,
        };
        const CELL_BUDGET: usize = 200_000_000; // ~1.6 GB of f64 accumulators
        let cells = t
            .checked_mul(2 * sq_cells + d)
            .ok_or_else(|| Error::InvalidInput("step count overflow".into()))?;
        if cells > CELL_BUDGET {
            return Err(Error::InvalidInput(format!(
                "per-step covariance accumulators need {cells} floats (budget {CELL_BUDGET}); \
                 reduce epochs, model size, or switch partition_mode to per_param"
            )));
        }
        let transfer = t * self.train.batch_size * d;
        if transfer > CELL_BUDGET {
            return Err(Error::InvalidInput(format!(
                "per-run gradient volume {transfer} floats exceeds the budget {CELL_BUDGET}; \
                 reduce epochs or model size"
            )));
        }
        Ok(())
    }
}

enum TaskSampler {
    Regression(SyntheticRegression),
    Classification(SyntheticClassification),
    Mnist { images: Vec<Vec<f64>>, labels: Vec<u8> },
}

impl TaskSampler {
    fn build(cfg: &ExperimentConfig) -> Result<TaskSampler> {
        let master = cfg.train.seed;
        Ok(match cfg.task {
            TaskKind::Synthetic => TaskSampler::Regression(SyntheticRegression::with_dims(
                master,
                cfg.input_dim,
                cfg.noise_std,
            )),
            TaskKind::SyntheticClass => TaskSampler::Classification(SyntheticClassification::new(
                master,
                cfg.input_dim,
                cfg.num_classes,
            )),
            TaskKind::Mnist => {
                let (ip, lp) = match (&cfg.mnist_images, &cfg.mnist_labels) {
                    (Some(i), Some(l)) => (i.clone(), l.clone()),
                    _ => {
                        return Err(Error::InvalidInput(
                            "mnist task needs mnist_images and mnist_labels paths".into(),
                        ))
                    }
                };
                let images = data::parse_idx_images(&std::fs::read(ip)?)?;
                let labels = data::parse_idx_labels(&std::fs::read(lp)?)?;
                if images.len() != labels.len() {
                    return Err(Error::InvalidInput(
                        "image and label counts differ".into(),
                    ));
                }
                TaskSampler::Mnist { images, labels }
            }
        })
    }

    /// Fresh train/test pair for one run.
    fn sample(&self, cfg: &ExperimentConfig, run_seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            TaskSampler::Regression(task) => {
                let train = task.generate(cfg.n_train, seeds::derive(run_seed, 11));
                let test = task.generate(cfg.n_test, seeds::derive(run_seed, 12));
                Ok((train, test))
            }
            TaskSampler::Classification(task) => {
                let train = task.generate(cfg.n_train, seeds::derive(run_seed, 11));
                let test = task.generate(cfg.n_test, seeds::derive(run_seed, 12));
                Ok((train, test))
            }
            TaskSampler::Mnist { images, labels } => {
                let subsample = |n: usize, seed: u64| -> Result<Dataset> {
                    if n == 0 || n > images.len() {
                        return Err(Error::InvalidInput(format!(
                            "subsample size {n} out of range (dataset has {})",
                            images.len()
                        )));
                    }
                    let mut idx: Vec<usize> = (0..images.len()).collect();
                    let mut rng = seeds::stream_rng(seed, seeds::DATA);
                    use rand::Rng;
                    for i in 0..n {
                        let j = rng.gen_range(i..idx.len());
                        idx.swap(i, j);
                    }
                    idx.truncate(n);
                    Ok(Dataset::classification(
                        idx.iter().map(|&i| images[i].clone()).collect(),
                        idx.iter().map(|&i| labels[i] as usize).collect(),
                        10,
                    ))
                };
                Ok((
                    subsample(cfg.n_train, seeds::derive(run_seed, 11))?,
                    subsample(cfg.n_test, seeds::derive(run_seed, 12))?,
                ))
            }
        }
    }
}

/// Everything one run contributes to the experiment, before cross-run folds.
pub struct RunOutput {
    pub run_index: usize,
    pub train_set: Dataset,
    pub s_flat: Vec<f64>,
    pub w0: Vec<f64>,
    /// Parameters after each step (step-major).
    pub w_steps: Vec<Vec<f64>>,
    pub batches: Vec<Vec<u32>>,
    pub batch_losses: Vec<f64>,
    /// Per-sample gradients per step; dropped after the covariance fold.
    pub per_step_grads: Vec<Vec<Vec<f64>>>,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_test_loss: Vec<f64>,
    pub hessian_trace: Option<f64>,
    pub trajectory: Trajectory,
}

const RUN_TAG: u64 = 0x52_55_4E_00;

pub fn run_seed_for(master: u64, run_index: usize) -> u64 {
    seeds::derive(master, RUN_TAG + run_index as u64)
}

/// Executes one training run and captures its contributions.
fn run_one(
    cfg: &ExperimentConfig,
    sampler: &TaskSampler,
    shared_model: &MlpModel,
    run_index: usize,
) -> Result<RunOutput> {
    let run_seed = run_seed_for(cfg.train.seed, run_index);
    let (mut train_set, test_set) = sampler.sample(cfg, run_seed)?;
    if cfg.label_noise > 0.0 {
        train_set = data::corrupt_labels(&train_set, cfg.label_noise, run_seed)?;
    }
    let model = if cfg.shared_init {
        shared_model.clone()
    } else {
        let mut rng = seeds::stream_rng(run_seed, seeds::INIT);
        MlpModel::new(&cfg.layer_sizes(), &mut rng)
    };
    let loss = cfg.loss_kind();
    let mut run_cfg = cfg.train;
    run_cfg.seed = run_seed;

    let t_total = run_cfg.total_steps(train_set.len());
    let mut w_steps = Vec::with_capacity(t_total);
    let mut batches = Vec::with_capacity(t_total);
    let mut batch_losses = Vec::with_capacity(t_total);
    let mut per_step_grads = Vec::with_capacity(t_total);
    let mut trajectory = train::run_training_with(
        &model,
        &train_set,
        Some(&test_set),
        loss,
        &run_cfg,
        |ctx| {
            w_steps.push(ctx.params_after.to_vec());
            batches.push(ctx.batch.to_vec());
            batch_losses.push(ctx.mean_loss);
            per_step_grads.push(ctx.per_sample_grads.to_vec());
        },
    )?;

    let hessian_trace = if run_cfg.algorithm == Algorithm::Sgd {
        train::attach_auxiliary(&mut trajectory, cfg.virtual_sigma2, run_seed)?;
        let final_model = model.with_params(&trajectory.final_params)?;
        let cap = test_set.len().min(1000);
        let inputs = &test_set.inputs[..cap];
        let targets = &test_set.targets[..cap];
        Some(nn::hessian_trace_hutchinson(
            &final_model,
            inputs,
            targets,
            loss,
            cfg.hessian_probes,
            seeds::derive(run_seed, seeds::HESSIAN),
        )?)
    } else {
        None
    };

    Ok(RunOutput {
        run_index,
        s_flat: train_set.flatten_all(),
        train_set,
        w0: model.flatten(),
        w_steps,
        batches,
        batch_losses,
        per_step_grads,
        epoch_train_loss: trajectory.train_loss_per_epoch.clone(),
        epoch_test_loss: trajectory.test_loss_per_epoch.clone(),
        hessian_trace,
        trajectory,
    })
}

/// Executes a single run by index, exactly as the full experiment would.
pub fn execute_run(cfg: &ExperimentConfig, run_index: usize) -> Result<RunOutput> {
    let sampler = TaskSampler::build(cfg)?;
    let shared_model = {
        let mut rng = seeds::stream_rng(seeds::derive(cfg.train.seed, 0x11), seeds::INIT);
        MlpModel::new(&cfg.layer_sizes(), &mut rng)
    };
    run_one(cfg, &sampler, &shared_model, run_index)
}

/// Rebuilds a run's contributions from a saved trajectory (with per-step
/// records) by re-deriving its dataset from the config seeds and replaying
/// the per-sample gradients at the recorded parameters.
pub fn rebuild_run_output(
    cfg: &ExperimentConfig,
    sampler_cfg: &ExperimentConfig,
    traj: Trajectory,
    run_index: usize,
) -> Result<RunOutput> {
    let sampler = TaskSampler::build(sampler_cfg)?;
    let run_seed = run_seed_for(cfg.train.seed, run_index);
    let (mut train_set, test_set) = sampler.sample(cfg, run_seed)?;
    if cfg.label_noise > 0.0 {
        train_set = data::corrupt_labels(&train_set, cfg.label_noise, run_seed)?;
    }
    let t_total = traj.total_steps();
    if traj.config.record_every != 1 || traj.steps.len() != t_total {
        return Err(Error::InvalidInput(
            "re-rendering needs trajectories recorded at every step (record_every = 1)".into(),
        ));
    }
    let loss = traj.loss;
    let model = MlpModel::zeros(&cfg.layer_sizes());
    if model.param_count() != traj.dim {
        return Err(Error::InvalidInput(
            "trajectory dimension does not match the config model".into(),
        ));
    }
    let mut w_steps = Vec::with_capacity(t_total);
    let mut batches = Vec::with_capacity(t_total);
    let mut batch_losses = Vec::with_capacity(t_total);
    let mut per_step_grads = Vec::with_capacity(t_total);
    for rec in &traj.steps {
        let scratch = model.with_params(&rec.params_before)?;
        let (inputs, targets) = train_set.select(&rec.batch);
        let grads = match &rec.per_sample_grads {
            Some(g) => g.clone(),
            None => scratch.per_sample_gradients(&inputs, &targets, loss)?,
        };
        w_steps.push(rec.params_after.clone());
        batches.push(rec.batch.clone());
        batch_losses.push(rec.mean_loss);
        per_step_grads.push(grads);
    }
    let hessian_trace = if traj.config.algorithm == Algorithm::Sgd {
        let final_model = model.with_params(&traj.final_params)?;
        let cap = test_set.len().min(1000);
        Some(nn::hessian_trace_hutchinson(
            &final_model,
            &test_set.inputs[..cap],
            &test_set.targets[..cap],
            loss,
            cfg.hessian_probes,
            seeds::derive(run_seed, seeds::HESSIAN),
        )?)
    } else {
        None
    };
    Ok(RunOutput {
        run_index,
        s_flat: train_set.flatten_all(),
        w0: traj.initial_params.clone(),
        train_set,
        w_steps,
        batches,
        batch_losses,
        per_step_grads,
        epoch_train_loss: traj.train_loss_per_epoch.clone(),
        epoch_test_loss: traj.test_loss_per_epoch.clone(),
        hessian_trace,
        trajectory: traj,
    })
}

/// Cross-run aligned sample views used by the MI estimates.
pub struct MiSamples {
    /// 0-based epoch indices at which rows were recorded.
    pub recorded_epochs: Vec<usize>,
    /// One flattened dataset per effective run.
    pub s_flat: Vec<Vec<f64>>,
    /// [recorded epoch][run] flattened parameters at the epoch-end step.
    pub w_epoch_end: Vec<Vec<Vec<f64>>>,
    /// [recorded epoch][run] parameters one step before the epoch-end step.
    pub w_epoch_prev: Vec<Vec<Vec<f64>>>,
    /// [recorded epoch][run] flattened batch contents of the epoch-end step.
    pub b_epoch_end: Vec<Vec<Vec<f64>>>,
}

pub struct ExperimentResult {
    pub report: BoundReport,
    pub mi: MiSamples,
    pub trajectories: Vec<Trajectory>,
    /// (theta_c, theta_v) per step at the batch-mean covariance scale.
    pub per_step_theta: Vec<(f64, f64)>,
}

// Light per-run retention after the covariance fold.
struct LightRun {
    s_flat: Vec<f64>,
    w0: Vec<f64>,
    w_steps: Vec<Vec<f64>>,
    b_flat_steps: Option<Vec<Vec<f64>>>,
    batch_losses: Vec<f64>,
    epoch_train_loss: Vec<f64>,
    epoch_test_loss: Vec<f64>,
    hessian_trace: Option<f64>,
}

enum CovShape {
    Dense,
    Blocks(Vec<Range<usize>>),
    Diag,
}

struct Accum {
    d: usize,
    steps: usize,
    batch: usize,
    shape: CovShape,
    /// Within-batch covariance sums (scaled by 1/b), one slab per step.
    sum_cov: Vec<Vec<f64>>,
    /// Outer products of the batch-mean gradients, same layout as sum_cov.
    sum_outer: Vec<Vec<f64>>,
    sum_mean: Vec<Vec<f64>>,
    l_max: f64,
    count: usize,
}

impl Accum {
    fn new(cfg: &ExperimentConfig, model: &MlpModel) -> Accum {
        let d = model.param_count();
        let steps = cfg.train.total_steps(cfg.n_train);
        let shape = match cfg.partition_mode {
            PartitionMode::Full => CovShape::Dense,
            PartitionMode::PerLayer => {
                if d <= bounds::MAX_DENSE_COV_DIM {
                    CovShape::Dense
                } else {
                    CovShape::Blocks(model.layer_groups())
                }
            }
            PartitionMode::PerParam => {
                if d <= bounds::MAX_DENSE_COV_DIM {
                    CovShape::Dense
                } else {
                    CovShape::Diag
                }
            }
        };
        let slab = match &shape {
            CovShape::Dense => d * d,
            CovShape::Blocks(groups) => groups.iter().map(|g| g.len() * g.len()).sum(),
            CovShape::Diag => d,
        };
        Accum {
            d,
            steps,
            batch: cfg.train.batch_size,
            shape,
            sum_cov: vec![vec![0.0; slab]; steps],
            sum_outer: vec![vec![0.0; slab]; steps],
            sum_mean: vec![vec![0.0; d]; steps],
            l_max: 0.0,
            count: 0,
        }
    }

    fn fold(&mut self, run: &RunOutput) {
        let d = self.d;
        let b = self.batch as f64;
        let scale = 1.0 / (b * (b - 1.0));
        let mut centered: Vec<Vec<f64>> = vec![vec![0.0; d]; self.batch];
        for (t, grads) in run.per_step_grads.iter().enumerate() {
            let mean = nn::mean_vector(grads);
            for g in grads {
                let n: f64 = g.iter().map(|v| v * v).sum();
                if n > self.l_max {
                    self.l_max = n;
                }
            }
            for (c, g) in centered.iter_mut().zip(grads.iter()) {
                for i in 0..d {
                    c[i] = g[i] - mean[i];
                }
            }
            match &self.shape {
                CovShape::Dense => {
                    let cov = &mut self.sum_cov[t];
                    for c in &centered {
                        for i in 0..d {
                            let ci = c[i] * scale;
                            let row = &mut cov[i * d..(i + 1) * d];
                            for (rj, cj) in row.iter_mut().zip(c.iter()) {
                                *rj += ci * cj;
                            }
                        }
                    }
                    let outer = &mut self.sum_outer[t];
                    for i in 0..d {
                        let mi = mean[i];
                        let row = &mut outer[i * d..(i + 1) * d];
                        for (rj, mj) in row.iter_mut().zip(mean.iter()) {
                            *rj += mi * mj;
                        }
                    }
                }
                CovShape::Blocks(groups) => {
                    let mut off = 0;
                    for g in groups {
                        let s = g.len();
                        let cov = &mut self.sum_cov[t][off..off + s * s];
                        let outer = &mut self.sum_outer[t][off..off + s * s];
                        for c in &centered {
                            for (bi, i) in g.clone().enumerate() {
                                let ci = c[i] * scale;
                                for (bj, j) in g.clone().enumerate() {
                                    cov[bi * s + bj] += ci * c[j];
                                }
                            }
                        }
                        for (bi, i) in g.clone().enumerate() {
                            let mi = mean[i];
                            for (bj, j) in g.clone().enumerate() {
                                outer[bi * s + bj] += mi * mean[j];
                            }
                        }
                        off += s * s;
                    }
                }
                CovShape::Diag => {
                    let cov = &mut self.sum_cov[t];
                    let outer = &mut self.sum_outer[t];
                    for c in &centered {
                        for i in 0..d {
                            cov[i] += c[i] * c[i] * scale;
                        }
                    }
                    for i in 0..d {
                        outer[i] += mean[i] * mean[i];
                    }
                }
            }
            for (s, m) in self.sum_mean[t].iter_mut().zip(mean.iter()) {
                *s += m;
            }
        }
        self.count += 1;
    }

    /// Eigenvalues of the averaged covariance at step `t`, plus per-part
    /// eigenvalue sets for the partitioned sum, plus the same for the
    /// across-run (shift) covariance.
    fn step_spectra(
        &self,
        t: usize,
        partition: &[Vec<usize>],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let r = self.count as f64;
        let d = self.d;
        let avg = |v: f64| v / r;
        // shift slab: (sum_outer - r * mean_bar mean_bar^T) / (r - 1)
        let mean_bar: Vec<f64> = self.sum_mean[t].iter().map(|v| v / r).collect();
        match &self.shape {
            CovShape::Dense => {
                let mut cov = SymMatrix::zeros(d);
                let mut shift = SymMatrix::zeros(d);
                let slab_c = &self.sum_cov[t];
                let slab_o = &self.sum_outer[t];
                for i in 0..d {
                    for j in i..d {
                        cov.set(i, j, avg(slab_c[i * d + j]));
                        let sh = (slab_o[i * d + j] - r * mean_bar[i] * mean_bar[j]) / (r - 1.0);
                        shift.set(i, j, sh);
                    }
                }
                let full = clamp_nonneg(matrix::sym_eigenvalues(&cov)?);
                let mut parts = Vec::with_capacity(partition.len());
                if partition.len() == 1 && partition[0].len() == d {
                    parts.push(full.clone());
                } else {
                    for p in partition {
                        let sub = matrix::principal_submatrix(&cov, p)?;
                        parts.push(clamp_nonneg(matrix::sym_eigenvalues(&sub)?));
                    }
                }
                let mut shift_parts = Vec::with_capacity(partition.len());
                for p in partition {
                    let sub = matrix::principal_submatrix(&shift, p)?;
                    shift_parts.push(clamp_nonneg(matrix::sym_eigenvalues(&sub)?));
                }
                Ok((full, parts, shift_parts))
            }
            CovShape::Blocks(groups) => {
                let mut off = 0;
                let mut parts = Vec::with_capacity(groups.len());
                let mut shift_parts = Vec::with_capacity(groups.len());
                for g in groups {
                    let s = g.len();
                    let mut cov = SymMatrix::zeros(s);
                    let mut shift = SymMatrix::zeros(s);
                    let slab_c = &self.sum_cov[t][off..off + s * s];
                    let slab_o = &self.sum_outer[t][off..off + s * s];
                    for bi in 0..s {
                        for bj in bi..s {
                            cov.set(bi, bj, avg(slab_c[bi * s + bj]));
                            let gi = g.start + bi;
                            let gj = g.start + bj;
                            let sh =
                                (slab_o[bi * s + bj] - r * mean_bar[gi] * mean_bar[gj]) / (r - 1.0);
                            shift.set(bi, bj, sh);
                        }
                    }
                    parts.push(clamp_nonneg(matrix::sym_eigenvalues(&cov)?));
                    shift_parts.push(clamp_nonneg(matrix::sym_eigenvalues(&shift)?));
                    off += s * s;
                }
                let full: Vec<f64> = parts.iter().flatten().copied().collect();
                Ok((full, parts, shift_parts))
            }
            CovShape::Diag => {
                let diag: Vec<f64> = self.sum_cov[t].iter().map(|v| (v / r).max(0.0)).collect();
                let shift: Vec<f64> = self.sum_outer[t]
                    .iter()
                    .zip(mean_bar.iter())
                    .map(|(o, m)| ((o - r * m * m) / (r - 1.0)).max(0.0))
                    .collect();
                let parts: Vec<Vec<f64>> = diag.iter().map(|&v| vec![v]).collect();
                let shift_parts: Vec<Vec<f64>> = shift.iter().map(|&v| vec![v]).collect();
                Ok((diag, parts, shift_parts))
            }
        }
    }
}

fn clamp_nonneg(mut vals: Vec<f64>) -> Vec<f64> {
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    vals
}

fn half_logdet_from_eigs(vals: &[f64], c: f64) -> f64 {
    0.5 * vals.iter().map(|&l| (c * l).ln_1p()).sum::<f64>()
}

fn center_views(views: &mut [Vec<f64>]) {
    if views.is_empty() {
        return;
    }
    let d = views[0].len();
    let n = views.len() as f64;
    let mut mean = vec![0.0; d];
    for v in views.iter() {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for v in views.iter_mut() {
        for (x, m) in v.iter_mut().zip(mean.iter()) {
            *x -= m;
        }
    }
}

/// Kernel over centered views: width from the top-quantile distance band,
/// or 1.0 when all views coincide (any width gives an all-ones Gram then).
fn view_kernel(views: &[Vec<f64>], quantile: f64) -> Result<KernelSpec> {
    let dim = views[0].len();
    let width = match kernel::select_width(views, quantile) {
        Ok(w) => w,
        Err(Error::DegenerateSamples) => 1.0,
        Err(e) => return Err(e),
    };
    KernelSpec::gaussian(width, dim)
}

/// Folds the runs (in run-index order) and assembles the report.
pub fn process_runs(
    cfg: &ExperimentConfig,
    runs: Vec<RunOutput>,
    excluded: Vec<usize>,
    requested: usize,
) -> Result<ExperimentResult> {
    if runs.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: runs.len(),
        });
    }
    let model = MlpModel::zeros(&cfg.layer_sizes());
    let partition = cfg.partition(&model);
    let mut acc = Accum::new(cfg, &model);
    let mut light: Vec<LightRun> = Vec::with_capacity(runs.len());
    let mut trajectories = Vec::with_capacity(runs.len());
    let spe = cfg.train.steps_per_epoch(cfg.n_train);
    let epochs = cfg.train.epochs;
    let t_total = acc.steps;
    let mi_on = cfg.mi_epoch_stride > 0;
    for run in runs {
        acc.fold(&run);
        let b_flat_steps = mi_on.then(|| {
            run.batches
                .iter()
                .map(|b| run.train_set.flatten_batch(b))
                .collect()
        });
        light.push(LightRun {
            s_flat: run.s_flat,
            w0: run.w0,
            w_steps: run.w_steps,
            b_flat_steps,
            batch_losses: run.batch_losses,
            epoch_train_loss: run.epoch_train_loss,
            epoch_test_loss: run.epoch_test_loss,
            hessian_trace: run.hessian_trace,
        });
        trajectories.push(run.trajectory);
    }
    let r_eff = light.len();

    // per-step bound terms
    let sigma2 = cfg.bound_sigma2();
    let eta = cfg.train.eta;
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let c = eta * eta / sigma2;
    let b = cfg.train.batch_size as f64;
    let d = acc.d;
    let mut cum = CumTerms::default();
    let mut per_step_theta = Vec::with_capacity(t_total);
    let mut cum_rows: Vec<CumTerms> = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let (full, parts, shift_parts) = acc.step_spectra(t, &partition)?;
        let trace: f64 = full.iter().sum();
        let tc = half_logdet_from_eigs(&full, c);
        let tp: f64 = parts.iter().map(|p| half_logdet_from_eigs(p, c)).sum();
        let tv = bounds::theta_v(trace, eta, sigma2, d)?;
        let tshift: f64 = shift_parts
            .iter()
            .map(|p| half_logdet_from_eigs(p, c))
            .sum();
        // per-sample covariance scale: eigenvalues scale by b exactly
        let tc_psc = half_logdet_from_eigs(&full, c * b);
        let tp_psc: f64 = parts
            .iter()
            .map(|p| half_logdet_from_eigs(p, c * b))
            .sum();
        let tv_psc = bounds::theta_v(trace * b, eta, sigma2, d)?;
        cum.theta_c += tc;
        cum.theta_c_part += tp;
        cum.theta_v += tv;
        cum.lemma2 += eta * eta * trace / (2.0 * sigma2);
        cum.theta_c_shift += tshift;
        cum.theta_c_psc += tc_psc;
        cum.theta_c_part_psc += tp_psc;
        cum.theta_v_psc += tv_psc;
        cum.lemma2_psc += eta * eta * trace * b / (2.0 * sigma2);
        per_step_theta.push((tc, tv));
        cum_rows.push(cum.clone());
    }
    let lemma1_step = bounds::theta_v(acc.l_max, eta, sigma2, d)?;

    // pooled loss extremes per epoch prefix -> running R
    let mut r_per_epoch = vec![0.0; epochs];
    {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for e in 0..epochs {
            for run in &light {
                for &l in &run.batch_losses[e * spe..(e + 1) * spe] {
                    hi = hi.max(l);
                    lo = lo.min(l);
                }
            }
            r_per_epoch[e] = 0.5 * (hi - lo);
        }
    }

    // recorded epochs
    let stride = if mi_on { cfg.mi_epoch_stride } else { 1 };
    let recorded: Vec<usize> = (0..epochs)
        .filter(|e| (e + 1) % stride == 0 || *e == epochs - 1)
        .collect();

    // MI estimates
    let mut iws_at: Vec<Option<f64>> = vec![None; epochs];
    let mut iwbw_at: Vec<Option<f64>> = vec![None; epochs];
    let mut mi_samples = MiSamples {
        recorded_epochs: recorded.clone(),
        s_flat: Vec::new(),
        w_epoch_end: Vec::new(),
        w_epoch_prev: Vec::new(),
        b_epoch_end: Vec::new(),
    };
    if mi_on {
        let q = cfg.kernel_quantile;
        let norm = cfg.apply_normalizer;
        let mut s_views: Vec<Vec<f64>> = light.iter().map(|r| r.s_flat.clone()).collect();
        mi_samples.s_flat = s_views.clone();
        center_views(&mut s_views);
        let ks = view_kernel(&s_views, q)?;
        // iws at recorded epochs
        for &e in &recorded {
            let t_end = (e + 1) * spe - 1;
            let mut w_views: Vec<Vec<f64>> =
                light.iter().map(|r| r.w_steps[t_end].clone()).collect();
            mi_samples.w_epoch_end.push(w_views.clone());
            let prev_views: Vec<Vec<f64>> = light
                .iter()
                .map(|r| {
                    if t_end == 0 {
                        r.w0.clone()
                    } else {
                        r.w_steps[t_end - 1].clone()
                    }
                })
                .collect();
            mi_samples.w_epoch_prev.push(prev_views);
            mi_samples.b_epoch_end.push(
                light
                    .iter()
                    .map(|r| r.b_flat_steps.as_ref().expect("mi on")[t_end].clone())
                    .collect(),
            );
            center_views(&mut w_views);
            let kw = view_kernel(&w_views, q)?;
            iws_at[e] = Some(kernel::mi_estimate(&w_views, &s_views, &kw, &ks, norm)?);
        }
        // cumulative clamped conditional-MI terms at every step
        let mut cum_iwbw = 0.0;
        let mut iwbw_by_step = Vec::with_capacity(t_total);
        for t in 0..t_total {
            let mut w_views: Vec<Vec<f64>> = light.iter().map(|r| r.w_steps[t].clone()).collect();
            let mut b_views: Vec<Vec<f64>> = light
                .iter()
                .map(|r| r.b_flat_steps.as_ref().expect("mi on")[t].clone())
                .collect();
            let mut z_views: Vec<Vec<f64>> = light
                .iter()
                .map(|r| {
                    if t == 0 {
                        r.w0.clone()
                    } else {
                        r.w_steps[t - 1].clone()
                    }
                })
                .collect();
            center_views(&mut w_views);
            center_views(&mut b_views);
            center_views(&mut z_views);
            let kw = view_kernel(&w_views, q)?;
            let kb = view_kernel(&b_views, q)?;
            let kz = view_kernel(&z_views, q)?;
            let term =
                kernel::cond_mi_estimate(&w_views, &b_views, &z_views, &kw, &kb, &kz, norm)?;
            cum_iwbw += term.max(0.0);
            iwbw_by_step.push(cum_iwbw);
        }
        for &e in &recorded {
            iwbw_at[e] = Some(iwbw_by_step[(e + 1) * spe - 1]);
        }
    }

    // hessian term (sgd only): H at the final parameters, averaged over runs
    let hessian_mean = if cfg.train.algorithm == Algorithm::Sgd {
        let vals: Vec<f64> = light.iter().filter_map(|r| r.hessian_trace).collect();
        Some(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
    } else {
        None
    };

    // rows
    let mut rows = Vec::with_capacity(recorded.len());
    for &e in &recorded {
        let t_end = (e + 1) * spe - 1;
        let cumt = &cum_rows[t_end];
        let gap = {
            let mut g = 0.0;
            for run in &light {
                g += run.epoch_test_loss[e] - run.epoch_train_loss[e];
            }
            g / r_eff as f64
        };
        let r_sub = r_per_epoch[e];
        let n = cfg.n_train;
        let iws = iws_at[e];
        let iwbw = iwbw_at[e];
        let steps_so_far = (t_end + 1) as f64;
        rows.push(EpochRow {
            epoch: e,
            true_gap: gap,
            r_subgaussian: r_sub,
            iws,
            iwbw,
            thm1_from_iws: iws.map(|v| bounds::thm1_bounds(v, r_sub, n).0),
            thm1_from_iwbw: iwbw.map(|v| bounds::thm1_bounds(v, r_sub, n).0),
            theta_c_sum: cumt.theta_c,
            theta_c_part_sum: cumt.theta_c_part,
            theta_v_sum: cumt.theta_v,
            lemma2_sum: cumt.lemma2,
            lemma1_sum: lemma1_step * steps_so_far,
            theta_c_shift_sum: cumt.theta_c_shift,
            theta_c_psc_sum: cumt.theta_c_psc,
            theta_c_part_psc_sum: cumt.theta_c_part_psc,
            theta_v_psc_sum: cumt.theta_v_psc,
            lemma2_psc_sum: cumt.lemma2_psc,
            thm1_from_theta_c_psc: bounds::thm1_bounds(cumt.theta_c_psc, r_sub, n).0,
            thm1_from_theta_v_psc: bounds::thm1_bounds(cumt.theta_v_psc, r_sub, n).0,
            sgd_hessian_term: hessian_mean
                .map(|h| 0.5 * steps_so_far * cfg.virtual_sigma2 * h),
        });
    }

    let report = BoundReport {
        rows,
        requested_runs: requested,
        effective_runs: r_eff,
        n_train: cfg.n_train,
        excluded_runs: excluded,
    };
    Ok(ExperimentResult {
        report,
        mi: mi_samples,
        trajectories,
        per_step_theta,
    })
}

#[derive(Default, Clone)]
struct CumTerms {
    theta_c: f64,
    theta_c_part: f64,
    theta_v: f64,
    lemma2: f64,
    theta_c_shift: f64,
    theta_c_psc: f64,
    theta_c_part_psc: f64,
    theta_v_psc: f64,
    lemma2_psc: f64,
}

/// Runs the full experiment: `runs` independent trainings on parallel
/// workers, deterministic ordered folds, MI estimation, report assembly.
/// Diverged runs are excluded and recorded.
pub fn orchestrate(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sampler = TaskSampler::build(cfg)?;
    let shared_model = {
        let mut rng = seeds::stream_rng(seeds::derive(cfg.train.seed, 0x11), seeds::INIT);
        MlpModel::new(&cfg.layer_sizes(), &mut rng)
    };
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut outputs: Vec<RunOutput> = Vec::with_capacity(cfg.runs);
    let mut excluded = Vec::new();
    let ids: Vec<usize> = (0..cfg.runs).collect();
    for batch in ids.chunks(chunk) {
        let results: Vec<(usize, Result<RunOutput>)> = batch
            .par_iter()
            .map(|&r| (r, run_one(cfg, &sampler, &shared_model, r)))
            .collect();
        for (r, res) in results {
            match res {
                Ok(out) => outputs.push(out),
                Err(Error::DivergedTraining { .. }) => excluded.push(r),
                Err(e) => return Err(e),
            }
        }
    }
    process_runs(cfg, outputs, excluded, cfg.runs)
}
