//! SGD and SGLD training loops with full trajectory recording.
//!
//! The update rule is W_t = W_{t-1} - eta * g(W_{t-1}, B_t) + xi_t with
//! isotropic Gaussian noise xi_t ~ N(0, sigma2 I) for SGLD and xi_t = 0 for
//! SGD. Batches are an epoch-wise shuffled partition, so every index appears
//! in exactly one batch per epoch. For SGD, [`attach_auxiliary`] fills the
//! cumulative virtual-noise offsets Delta_t of the auxiliary process
//! W~_t = W_t + Delta_t.
//!
//! Trajectories serialize to a little-endian binary layout (see
//! [`save_trajectory`]) plus a JSON sidecar of the config; the round trip is
//! bit-lossless.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{mean_vector, LossKind, MlpModel};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use std::path::Path;

/// Independent, documented RNG sub-streams derived from one master seed, so
/// components replay independently.
pub mod seeds {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const AUXILIARY: u64 = 3;
    pub const DATA: u64 = 4;
    pub const CORRUPT: u64 = 5;
    pub const HESSIAN: u64 = 6;

    /// SplitMix64 mix of a master seed and a tag (run index, purpose, ...).
    pub fn derive(master: u64, tag: u64) -> u64 {
        let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// A ChaCha stream keyed by (seed, stream id).
    pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Sgld,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    /// Injected noise variance; must be 0 for SGD and positive for SGLD.
    pub sigma2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stride for keeping step records (1 = every step, 0 = none).
    pub record_every: usize,
    /// Whether kept records include per-sample gradients.
    pub record_grads: bool,
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidInput("eta must be positive".into()));
        }
        if self.batch_size == 0 || n_train < self.batch_size {
            return Err(Error::InvalidInput(
                "batch_size must be in [1, n_train]".into(),
            ));
        }
        if n_train % self.batch_size != 0 {
            return Err(Error::InvalidInput(format!(
                "dataset size {n_train} is not divisible by batch size {}",
                self.batch_size
            )));
        }
        match self.algorithm {
            Algorithm::Sgld if !(self.sigma2 > 0.0) => Err(Error::InvalidInput(
                "sgld requires sigma2 > 0".into(),
            )),
            Algorithm::Sgd if self.sigma2 != 0.0 => Err(Error::InvalidInput(
                "sgd requires sigma2 == 0 (the auxiliary process uses a separate virtual sigma2)"
                    .into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train / self.batch_size
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_train)
    }
}

/// Per-step record. `step` is 1-based; records exist at the configured
/// stride. The auxiliary offset Delta_t is filled by [`attach_auxiliary`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub batch: Vec<u32>,
    pub mean_loss: f64,
    pub params_before: Vec<f64>,
    pub params_after: Vec<f64>,
    pub noise: Vec<f64>,
    pub per_sample_grads: Option<Vec<Vec<f64>>>,
    pub aux_offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: TrainConfig,
    pub loss: LossKind,
    pub n_train: usize,
    pub dim: usize,
    pub initial_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub train_loss_per_epoch: Vec<f64>,
    pub test_loss_per_epoch: Vec<f64>,
    /// Virtual noise variance of the attached auxiliary process (SGD only).
    pub virtual_sigma2: Option<f64>,
}

impl Trajectory {
    pub fn total_steps(&self) -> usize {
        self.config.total_steps(self.n_train)
    }
}

/// One update: new = old - eta * mean(grads) + xi with xi ~ N(0, sigma2 I).
/// sigma2 = 0 degenerates to plain SGD and draws nothing from the RNG.
pub fn sgld_step(
    params: &[f64],
    per_sample_grads: &[Vec<f64>],
    eta: f64,
    sigma2: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma2 >= 0.0) {
        return Err(Error::DomainError("sigma2 must be >= 0".into()));
    }
    let g = mean_vector(per_sample_grads);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::DivergedTraining { step: 0 });
    }
    let d = params.len();
    let mut noise = vec![0.0; d];
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in noise.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sd * z;
        }
    }
    let mut new = Vec::with_capacity(d);
    for i in 0..d {
        new.push(params[i] - eta * g[i] + noise[i]);
    }
    Ok((new, noise))
}

/// Everything an observer sees about one training step.
pub struct StepContext<'a> {
    pub step: usize,
    pub epoch: usize,
    pub batch: &'a [u32],
    pub params_before: &'a [f64],
    pub params_after: &'a [f64],
    pub per_sample_grads: &'a [Vec<f64>],
    pub noise: &'a [f64],
    pub mean_loss: f64,
}

/// Runs training, invoking `observer` after every step. The observer is how
/// the experiment layer accumulates gradient statistics without retaining
/// per-sample gradients in the returned trajectory.
pub fn run_training_with(
    model: &MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    loss: LossKind,
    config: &TrainConfig,
    mut observer: impl FnMut(&StepContext<'_>),
) -> Result<Trajectory> {
    let n = train.len();
    config.validate(n)?;
    let mut current = model.clone();
    let initial = current.flatten();
    let mut params = initial.clone();
    let mut shuffle_rng = seeds::stream_rng(config.seed, seeds::SHUFFLE);
    let mut noise_rng = seeds::stream_rng(config.seed, seeds::NOISE);

    let steps_per_epoch = config.steps_per_epoch(n);
    let mut steps = Vec::new();
    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut test_losses = Vec::with_capacity(config.epochs);
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut t = 0usize;

    for epoch in 0..config.epochs {
        // seeded Fisher-Yates shuffle, then consecutive chunks as batches
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        for b in 0..steps_per_epoch {
            t += 1;
            let batch = &perm[b * config.batch_size..(b + 1) * config.batch_size];
            let (inputs, targets) = train.select(batch);
            let grads = current.per_sample_gradients(&inputs, &targets, loss)?;
            let (_, mean_loss) = current.forward(&inputs, &targets, loss)?;
            let (new_params, noise) =
                sgld_step(&params, &grads, config.eta, config.sigma2, &mut noise_rng).map_err(
                    |e| match e {
                        Error::DivergedTraining { .. } => Error::DivergedTraining { step: t },
                        other => other,
                    },
                )?;
            if new_params.iter().any(|v| !v.is_finite()) || !mean_loss.is_finite() {
                return Err(Error::DivergedTraining { step: t });
            }
            observer(&StepContext {
                step: t,
                epoch,
                batch,
                params_before: &params,
                params_after: &new_params,
                per_sample_grads: &grads,
                noise: &noise,
                mean_loss,
            });
            if config.record_every > 0 && (t - 1) % config.record_every == 0 {
                steps.push(StepRecord {
                    step: t,
                    batch: batch.to_vec(),
                    mean_loss,
                    params_before: params.clone(),
                    params_after: new_params.clone(),
                    noise: noise.clone(),
                    per_sample_grads: config.record_grads.then(|| grads.clone()),
                    aux_offset: None,
                });
            }
            params = new_params;
            current.set_from_flat(&params)?;
        }
        let (_, train_loss) = current.forward(&train.inputs, &train.targets, loss)?;
        train_losses.push(train_loss);
        let test_loss = match test {
            Some(ds) => current.forward(&ds.inputs, &ds.targets, loss)?.1,
            None => f64::NAN,
        };
        test_losses.push(test_loss);
    }

    Ok(Trajectory {
        config: *config,
        loss,
        n_train: n,
        dim: initial.len(),
        initial_params: initial,
        final_params: params,
        steps,
        train_loss_per_epoch: train_losses,
        test_loss_per_epoch: test_losses,
        virtual_sigma2: None,
    })
}

pub fn run_training(
    model: &MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    loss: LossKind,
    config: &TrainConfig,
) -> Result<Trajectory> {
    run_training_with(model, train, test, loss, config, |_| {})
}

/// Fills the auxiliary-process offsets Delta_t = sum_{i<=t} xi~_i with
/// xi~_i ~ N(0, virtual_sigma2 I) on an SGD trajectory. Idempotent for a
/// fixed seed.
pub fn attach_auxiliary(traj: &mut Trajectory, virtual_sigma2: f64, seed: u64) -> Result<()> {
    if traj.config.algorithm != Algorithm::Sgd {
        return Err(Error::InvalidInput(
            "auxiliary process applies to sgd trajectories only".into(),
        ));
    }
    if !(virtual_sigma2 >= 0.0 && virtual_sigma2.is_finite()) {
        return Err(Error::DomainError("virtual_sigma2 must be >= 0".into()));
    }
    let mut rng = seeds::stream_rng(seed, seeds::AUXILIARY);
    let d = traj.dim;
    let sd = virtual_sigma2.sqrt();
    let mut delta = vec![0.0; d];
    let mut next_record = 0usize;
    for t in 1..=traj.total_steps() {
        if virtual_sigma2 > 0.0 {
            for v in delta.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
        }
        if next_record < traj.steps.len() && traj.steps[next_record].step == t {
            traj.steps[next_record].aux_offset = Some(delta.clone());
            next_record += 1;
        }
    }
    traj.virtual_sigma2 = Some(virtual_sigma2);
    Ok(())
}

// --- binary serialization -------------------------------------------------
//
// Layout (all integers and floats little-endian):
//   magic  b"KRNTRAJ1"
//   u64    header length, then the header block:
//          u8 algorithm, u8 loss, f64 eta, f64 sigma2,
//          u64 epochs, u64 batch_size, u64 seed, u64 record_every,
//          u8 record_grads, u64 n_train, u64 dim,
//          u8 has_virtual_sigma2, f64 virtual_sigma2,
//          u64 epoch_count, epoch_count * f64 train losses,
//          epoch_count * f64 test losses,
//          u64 dim * f64 initial params, u64 dim * f64 final params
//   u64    step count, then per step a u64 block length and the block:
//          u64 step, u64 batch len, batch len * u32,
//          f64 mean loss, dim * f64 before, dim * f64 after, dim * f64 noise,
//          u8 has_grads, [u64 rows, rows * dim * f64],
//          u8 has_aux, [dim * f64]

const TRAJECTORY_MAGIC: &[u8; 8] = b"KRNTRAJ1";

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }
    fn fail<T>(&self, message: &str) -> Result<T> {
        Err(Error::FormatError {
            offset: self.pos as u64,
            message: message.into(),
        })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.fail("unexpected end of file");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn loss_to_u8(loss: LossKind) -> u8 {
    match loss {
        LossKind::Mse => 0,
        LossKind::SoftmaxCrossEntropy => 1,
    }
}

/// Serializes a trajectory to its binary representation.
pub fn trajectory_to_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut header = ByteWriter::new();
    header.u8(match traj.config.algorithm {
        Algorithm::Sgd => 0,
        Algorithm::Sgld => 1,
    });
    header.u8(loss_to_u8(traj.loss));
    header.f64(traj.config.eta);
    header.f64(traj.config.sigma2);
    header.u64(traj.config.epochs as u64);
    header.u64(traj.config.batch_size as u64);
    header.u64(traj.config.seed);
    header.u64(traj.config.record_every as u64);
    header.u8(traj.config.record_grads as u8);
    header.u64(traj.n_train as u64);
    header.u64(traj.dim as u64);
    header.u8(traj.virtual_sigma2.is_some() as u8);
    header.f64(traj.virtual_sigma2.unwrap_or(0.0));
    header.u64(traj.train_loss_per_epoch.len() as u64);
    header.f64s(&traj.train_loss_per_epoch);
    header.f64s(&traj.test_loss_per_epoch);
    header.f64s(&traj.initial_params);
    header.f64s(&traj.final_params);

    let mut out = ByteWriter::new();
    out.buf.extend_from_slice(TRAJECTORY_MAGIC);
    out.u64(header.buf.len() as u64);
    out.buf.extend_from_slice(&header.buf);
    out.u64(traj.steps.len() as u64);
    for s in &traj.steps {
        let mut block = ByteWriter::new();
        block.u64(s.step as u64);
        block.u64(s.batch.len() as u64);
        for &b in &s.batch {
            block.u32(b);
        }
        block.f64(s.mean_loss);
        block.f64s(&s.params_before);
        block.f64s(&s.params_after);
        block.f64s(&s.noise);
        match &s.per_sample_grads {
            Some(g) => {
                block.u8(1);
                block.u64(g.len() as u64);
                for row in g {
                    block.f64s(row);
                }
            }
            None => block.u8(0),
        }
        match &s.aux_offset {
            Some(a) => {
                block.u8(1);
                block.f64s(a);
            }
            None => block.u8(0),
        }
        out.u64(block.buf.len() as u64);
        out.buf.extend_from_slice(&block.buf);
    }
    out.buf
}

/// Parses a trajectory from its binary representation, reporting the byte
/// offset of any malformation.
pub fn trajectory_from_bytes(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(8)?;
    if magic != TRAJECTORY_MAGIC {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("bad magic {magic:02x?}"),
        });
    }
    let header_len = r.u64()? as usize;
    let header_end = r.pos + header_len;
    if header_end > bytes.len() {
        return r.fail("header extends past end of file");
    }
    let algorithm = match r.u8()? {
        0 => Algorithm::Sgd,
        1 => Algorithm::Sgld,
        v => return r.fail(&format!("unknown algorithm tag {v}")),
    };
    let loss = match r.u8()? {
        0 => LossKind::Mse,
        1 => LossKind::SoftmaxCrossEntropy,
        v => return r.fail(&format!("unknown loss tag {v}")),
    };
    let eta = r.f64()?;
    let sigma2 = r.f64()?;
    let epochs = r.u64()? as usize;
    let batch_size = r.u64()? as usize;
    let seed = r.u64()?;
    let record_every = r.u64()? as usize;
    let record_grads = r.u8()? != 0;
    let n_train = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let has_virtual = r.u8()? != 0;
    let virtual_sigma2 = r.f64()?;
    let epoch_count = r.u64()? as usize;
    if epoch_count > bytes.len() {
        return r.fail("implausible epoch count");
    }
    let train_loss_per_epoch = r.f64s(epoch_count)?;
    let test_loss_per_epoch = r.f64s(epoch_count)?;
    let initial_params = r.f64s(dim)?;
    let final_params = r.f64s(dim)?;
    if r.pos != header_end {
        return r.fail("header length does not match contents");
    }
    let step_count = r.u64()? as usize;
    if step_count > bytes.len() {
        return r.fail("implausible step count");
    }
    let mut steps = Vec::with_capacity(step_count);
    for _ in 0..step_count {
        let block_len = r.u64()? as usize;
        let block_end = r.pos + block_len;
        if block_end > bytes.len() {
            return r.fail("step block extends past end of file");
        }
        let step = r.u64()? as usize;
        let batch_len = r.u64()? as usize;
        if batch_len > block_len {
            return r.fail("implausible batch length");
        }
        let mut batch = Vec::with_capacity(batch_len);
        for _ in 0..batch_len {
            batch.push(r.u32()?);
        }
        let mean_loss = r.f64()?;
        let params_before = r.f64s(dim)?;
        let params_after = r.f64s(dim)?;
        let noise = r.f64s(dim)?;
        let per_sample_grads = if r.u8()? != 0 {
            let rows = r.u64()? as usize;
            if rows > block_len {
                return r.fail("implausible gradient row count");
            }
            let mut g = Vec::with_capacity(rows);
            for _ in 0..rows {
                g.push(r.f64s(dim)?);
            }
            Some(g)
        } else {
            None
        };
        let aux_offset = if r.u8()? != 0 { Some(r.f64s(dim)?) } else { None };
        if r.pos != block_end {
            return r.fail("step block length does not match contents");
        }
        steps.push(StepRecord {
            step,
            batch,
            mean_loss,
            params_before,
            params_after,
            noise,
            per_sample_grads,
            aux_offset,
        });
    }
    Ok(Trajectory {
        config: TrainConfig {
            algorithm,
            eta,
            sigma2,
            epochs,
            batch_size,
            seed,
            record_every,
            record_grads,
        },
        loss,
        n_train,
        dim,
        initial_params,
        final_params,
        steps,
        train_loss_per_epoch,
        test_loss_per_epoch,
        virtual_sigma2: has_virtual.then_some(virtual_sigma2),
    })
}

/// Writes the binary trajectory and a `<path>.json` sidecar with the config.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&trajectory_to_bytes(traj))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::json!({
        "config": traj.config,
        "loss": traj.loss,
        "n_train": traj.n_train,
        "dim": traj.dim,
        "virtual_sigma2": traj.virtual_sigma2,
    });
    std::fs::write(sidecar, serde_json::to_string_pretty(&json).expect("serializable"))?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    trajectory_from_bytes(&bytes)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}
