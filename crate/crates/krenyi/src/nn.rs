//! Minimal fully connected network with deterministic manual
//! backpropagation: per-sample losses and gradients, parameter
//! flattening/grouping, and Hessian-trace estimation.
//!
//! Hidden layers use ReLU with the subgradient at exactly zero defined as
//! zero; the output layer is linear. Losses are summed squared error or
//! softmax cross-entropy (natural log).

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

/// Per-sample training target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    use_bias: bool,
    /// Per layer, row-major (fan_out x fan_in).
    weights: Vec<Vec<f64>>,
    /// Per layer, length fan_out; empty when biases are disabled.
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Seeded init: per-layer uniform in +-1/sqrt(fan_in).
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Self {
        Self::build(layer_sizes, true, Some(rng))
    }

    pub fn new_no_bias(layer_sizes: &[usize], rng: &mut impl Rng) -> Self {
        Self::build(layer_sizes, false, Some(rng))
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        Self::build::<ChaCha8Rng>(layer_sizes, true, None)
    }

    fn build<R: Rng>(layer_sizes: &[usize], use_bias: bool, mut rng: Option<&mut R>) -> Self {
        assert!(
            layer_sizes.len() >= 2 && layer_sizes.iter().all(|&s| s > 0),
            "need at least input and output layer sizes"
        );
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = vec![0.0; fan_out * fan_in];
            let mut b = if use_bias { vec![0.0; fan_out] } else { Vec::new() };
            if let Some(rng) = rng.as_deref_mut() {
                for v in w.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
                for v in b.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            weights.push(w);
            biases.push(b);
        }
        MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            use_bias,
            weights,
            biases,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn set_weight(&mut self, layer: usize, out: usize, inp: usize, v: f64) {
        let fan_in = self.layer_sizes[layer];
        self.weights[layer][out * fan_in + inp] = v;
    }

    pub fn set_bias(&mut self, layer: usize, out: usize, v: f64) {
        assert!(self.use_bias, "model has no biases");
        self.biases[layer][out] = v;
    }

    /// Parameters in layer order, each layer's weight tensor (row-major)
    /// followed by its bias vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_from_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                v.len()
            )));
        }
        let mut off = 0;
        for l in 0..self.weights.len() {
            let wl = self.weights[l].len();
            self.weights[l].copy_from_slice(&v[off..off + wl]);
            off += wl;
            let bl = self.biases[l].len();
            self.biases[l].copy_from_slice(&v[off..off + bl]);
            off += bl;
        }
        Ok(())
    }

    /// Contiguous parameter ranges, one per weight tensor and one per bias
    /// tensor, covering [0, d) disjointly.
    pub fn layer_groups(&self) -> Vec<Range<usize>> {
        let mut groups = Vec::new();
        let mut off = 0;
        for l in 0..self.weights.len() {
            let wl = self.weights[l].len();
            groups.push(off..off + wl);
            off += wl;
            let bl = self.biases[l].len();
            if bl > 0 {
                groups.push(off..off + bl);
                off += bl;
            }
        }
        groups
    }

    /// Pre-activations and activations for one input.
    fn forward_one(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers + 1);
        act.push(x.to_vec());
        for l in 0..layers {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let mut z = vec![0.0; fan_out];
            let input = &act[l];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                let mut acc: f64 = row.iter().zip(input.iter()).map(|(w, a)| w * a).sum();
                if self.use_bias {
                    acc += self.biases[l][o];
                }
                *zo = acc;
            }
            let a = if l < layers - 1 {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    fn loss_one(&self, output: &[f64], target: &Target, loss: LossKind) -> Result<f64> {
        match (loss, target) {
            (LossKind::Mse, Target::Values(y)) => {
                if y.len() != output.len() {
                    return Err(Error::InvalidInput("target dimension mismatch".into()));
                }
                Ok(output
                    .iter()
                    .zip(y.iter())
                    .map(|(o, t)| {
                        let d = o - t;
                        d * d
                    })
                    .sum())
            }
            (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
                if *c >= output.len() {
                    return Err(Error::InvalidInput("class index out of range".into()));
                }
                let max = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + output.iter().map(|o| (o - max).exp()).sum::<f64>().ln();
                Ok(lse - output[*c])
            }
            _ => Err(Error::InvalidInput(
                "loss kind does not match target kind".into(),
            )),
        }
    }

    fn loss_grad_one(&self, output: &[f64], target: &Target, loss: LossKind) -> Result<Vec<f64>> {
        match (loss, target) {
            (LossKind::Mse, Target::Values(y)) => {
                if y.len() != output.len() {
                    return Err(Error::InvalidInput("target dimension mismatch".into()));
                }
                Ok(output
                    .iter()
                    .zip(y.iter())
                    .map(|(o, t)| 2.0 * (o - t))
                    .collect())
            }
            (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
                if *c >= output.len() {
                    return Err(Error::InvalidInput("class index out of range".into()));
                }
                let max = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = output.iter().map(|o| (o - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let mut g: Vec<f64> = exps.iter().map(|e| e / z).collect();
                g[*c] -= 1.0;
                Ok(g)
            }
            _ => Err(Error::InvalidInput(
                "loss kind does not match target kind".into(),
            )),
        }
    }

    /// Per-sample losses and their arithmetic mean.
    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Target],
        loss: LossKind,
    ) -> Result<(Vec<f64>, f64)> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput("inputs/targets length mismatch".into()));
        }
        if inputs.iter().any(|x| x.len() != self.input_dim()) {
            return Err(Error::InvalidInput("input dimension mismatch".into()));
        }
        let mut losses = Vec::with_capacity(inputs.len());
        for (x, t) in inputs.iter().zip(targets.iter()) {
            let (_, act) = self.forward_one(x);
            losses.push(self.loss_one(act.last().expect("output layer"), t, loss)?);
        }
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        Ok((losses, mean))
    }

    /// Per-sample gradients in flatten order. Their mean equals the gradient
    /// of the mean loss.
    pub fn per_sample_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Target],
        loss: LossKind,
    ) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput("inputs/targets length mismatch".into()));
        }
        if inputs.iter().any(|x| x.len() != self.input_dim()) {
            return Err(Error::InvalidInput("input dimension mismatch".into()));
        }
        let layers = self.weights.len();
        let d = self.param_count();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.weights[l].len() + self.biases[l].len();
        }
        let mut grads = Vec::with_capacity(inputs.len());
        for (x, t) in inputs.iter().zip(targets.iter()) {
            let (pre, act) = self.forward_one(x);
            let mut delta = self.loss_grad_one(act.last().expect("output"), t, loss)?;
            let mut grad = vec![0.0; d];
            for l in (0..layers).rev() {
                let fan_in = self.layer_sizes[l];
                let fan_out = self.layer_sizes[l + 1];
                let base = offsets[l];
                let input = &act[l];
                for (o, dv) in delta.iter().enumerate() {
                    let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(input.iter()) {
                        *g = dv * a;
                    }
                }
                if self.use_bias {
                    let bbase = base + fan_out * fan_in;
                    grad[bbase..bbase + fan_out].copy_from_slice(&delta);
                }
                if l > 0 {
                    let mut prev = vec![0.0; fan_in];
                    for (o, dv) in delta.iter().enumerate() {
                        let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                        for (p, w) in prev.iter_mut().zip(row.iter()) {
                            *p += dv * w;
                        }
                    }
                    // ReLU subgradient, zero at exactly zero
                    for (p, z) in prev.iter_mut().zip(pre[l - 1].iter()) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
            grads.push(grad);
        }
        Ok(grads)
    }

    /// Gradient of the mean loss over a batch (mean of per-sample gradients).
    pub fn mean_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Target],
        loss: LossKind,
    ) -> Result<Vec<f64>> {
        let grads = self.per_sample_gradients(inputs, targets, loss)?;
        Ok(mean_vector(&grads))
    }

    /// Returns a copy with parameters taken from `w`.
    pub fn with_params(&self, w: &[f64]) -> Result<MlpModel> {
        let mut m = self.clone();
        m.set_from_flat(w)?;
        Ok(m)
    }
}

pub fn mean_vector(vectors: &[Vec<f64>]) -> Vec<f64> {
    let d = vectors[0].len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    mean
}

/// Hutchinson trace estimate with Rademacher probes; Hessian-vector products
/// by central differencing of the supplied gradient function with step
/// 1e-4 * (1 + |w|).
pub fn hutchinson_trace(
    mut grad_fn: impl FnMut(&[f64]) -> Vec<f64>,
    w: &[f64],
    probes: usize,
    seed: u64,
) -> f64 {
    assert!(probes >= 1);
    let d = w.len();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-4 * (1.0 + norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    let mut wp = vec![0.0; d];
    let mut wm = vec![0.0; d];
    for _ in 0..probes {
        let v: Vec<f64> = (0..d)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for i in 0..d {
            wp[i] = w[i] + h * v[i];
            wm[i] = w[i] - h * v[i];
        }
        let gp = grad_fn(&wp);
        let gm = grad_fn(&wm);
        let mut quad = 0.0;
        for i in 0..d {
            quad += v[i] * (gp[i] - gm[i]) / (2.0 * h);
        }
        acc += quad;
    }
    acc / probes as f64
}

/// Exact (finite-difference) Hessian trace: second central difference of the
/// loss along every coordinate, step 1e-4 * (1 + |w_i|).
pub fn exact_trace_fd(mut loss_fn: impl FnMut(&[f64]) -> f64, w: &[f64]) -> f64 {
    let f0 = loss_fn(w);
    let mut acc = 0.0;
    let mut wt = w.to_vec();
    for i in 0..w.len() {
        let h = 1e-4 * (1.0 + w[i].abs());
        wt[i] = w[i] + h;
        let fp = loss_fn(&wt);
        wt[i] = w[i] - h;
        let fm = loss_fn(&wt);
        wt[i] = w[i];
        acc += (fp - 2.0 * f0 + fm) / (h * h);
    }
    acc
}

/// Hutchinson Hessian trace of the mean loss over the given data, evaluated
/// at the model's current parameters. Deterministic given the seed.
pub fn hessian_trace_hutchinson(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    targets: &[Target],
    loss: LossKind,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::DomainError("probes must be >= 1".into()));
    }
    let w = model.flatten();
    let mut scratch = model.clone();
    let grad_fn = |wv: &[f64]| -> Vec<f64> {
        scratch.set_from_flat(wv).expect("matching dimension");
        scratch
            .mean_gradient(inputs, targets, loss)
            .unwrap_or_else(|_| vec![f64::NAN; wv.len()])
    };
    Ok(hutchinson_trace(grad_fn, &w, probes, seed))
}

/// Exact finite-difference Hessian trace of the mean loss; guarded against
/// runaway cost on large models.
pub fn hessian_trace_exact_fd(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    targets: &[Target],
    loss: LossKind,
) -> Result<f64> {
    const MAX_DIM: usize = 2000;
    let d = model.param_count();
    if d > MAX_DIM {
        return Err(Error::TooLarge { dim: d, max: MAX_DIM });
    }
    let w = model.flatten();
    let mut scratch = model.clone();
    let loss_fn = |wv: &[f64]| -> f64 {
        scratch.set_from_flat(wv).expect("matching dimension");
        scratch
            .forward(inputs, targets, loss)
            .map(|(_, m)| m)
            .unwrap_or(f64::NAN)
    };
    Ok(exact_trace_fd(loss_fn, &w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_network_zero_loss() {
        let mut m = MlpModel::zeros(&[2, 2]);
        m.set_weight(0, 0, 0, 1.0);
        m.set_weight(0, 1, 1, 1.0);
        let inputs = vec![vec![0.3, -0.7], vec![1.5, 2.0]];
        let targets: Vec<Target> = inputs.iter().map(|x| Target::Values(x.clone())).collect();
        let (losses, mean) = m.forward(&inputs, &targets, LossKind::Mse).unwrap();
        assert!(losses.iter().all(|&l| l == 0.0));
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn single_neuron_squared_error() {
        let mut m = MlpModel::zeros(&[1, 1]);
        m.set_weight(0, 0, 0, 2.0);
        let (losses, mean) = m
            .forward(&[vec![3.0]], &[Target::Values(vec![0.0])], LossKind::Mse)
            .unwrap();
        assert_eq!(losses[0], 36.0);
        assert_eq!(mean, 36.0);
    }

    #[test]
    fn uniform_softmax_is_log_k() {
        let m = MlpModel::zeros(&[4, 5]);
        let (losses, _) = m
            .forward(
                &[vec![0.0; 4]],
                &[Target::Class(2)],
                LossKind::SoftmaxCrossEntropy,
            )
            .unwrap();
        assert!((losses[0] - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_loss_is_arithmetic_mean() {
        let mut rng = seeded(1);
        let m = MlpModel::new(&[3, 4, 2], &mut rng);
        let inputs: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Target> = (0..7)
            .map(|_| Target::Values(vec![rng.gen(), rng.gen()]))
            .collect();
        let (losses, mean) = m.forward(&inputs, &targets, LossKind::Mse).unwrap();
        let expect = losses.iter().sum::<f64>() / 7.0;
        assert!((mean - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicate_sample_identical_gradients() {
        let mut rng = seeded(2);
        let m = MlpModel::new(&[3, 5, 1], &mut rng);
        let x = vec![0.4, -0.2, 0.9];
        let g = m
            .per_sample_gradients(
                &[x.clone(), x.clone()],
                &[Target::Values(vec![1.0]), Target::Values(vec![1.0])],
                LossKind::Mse,
            )
            .unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn linear_regression_gradient_closed_form() {
        let mut m = MlpModel::zeros(&[3, 1]);
        let w = [0.5, -1.0, 2.0];
        for (i, &wi) in w.iter().enumerate() {
            m.set_weight(0, 0, i, wi);
        }
        let x = vec![1.0, 2.0, -0.5];
        let y = 0.7;
        let g = m
            .per_sample_gradients(&[x.clone()], &[Target::Values(vec![y])], LossKind::Mse)
            .unwrap();
        let pred: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let r = 2.0 * (pred - y);
        for i in 0..3 {
            assert!((g[0][i] - r * x[i]).abs() < 1e-12);
        }
        assert!((g[0][3] - r).abs() < 1e-12); // bias gradient
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(3);
        for trial in 0..10 {
            let sizes: Vec<usize> = if trial % 2 == 0 {
                vec![4, 6, 2]
            } else {
                vec![3, 5, 4, 1]
            };
            let m = MlpModel::new(&sizes, &mut rng);
            let b = 3;
            let inputs: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let out = *sizes.last().unwrap();
            let use_ce = trial % 3 == 0;
            let targets: Vec<Target> = if use_ce {
                (0..b).map(|_| Target::Class(rng.gen_range(0..out))).collect()
            } else {
                (0..b)
                    .map(|_| {
                        Target::Values((0..out).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    })
                    .collect()
            };
            let loss = if use_ce {
                LossKind::SoftmaxCrossEntropy
            } else {
                LossKind::Mse
            };
            let analytic = m.mean_gradient(&inputs, &targets, loss).unwrap();
            let w = m.flatten();
            let mut wt = w.clone();
            for i in 0..w.len() {
                let h = 1e-5;
                wt[i] = w[i] + h;
                let fp = m.with_params(&wt).unwrap().forward(&inputs, &targets, loss).unwrap().1;
                wt[i] = w[i] - h;
                let fm = m.with_params(&wt).unwrap().forward(&inputs, &targets, loss).unwrap().1;
                wt[i] = w[i];
                let fd = (fp - fm) / (2.0 * h);
                let denom = analytic[i].abs().max(1e-3);
                assert!(
                    (analytic[i] - fd).abs() / denom <= 1e-5,
                    "trial {trial} coord {i}: analytic {} vs fd {}",
                    analytic[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn relu_subgradient_zero_at_zero() {
        // zero input and zero bias put every hidden pre-activation at exactly 0
        let mut m = MlpModel::zeros(&[2, 3, 1]);
        m.set_weight(1, 0, 0, 1.0);
        m.set_weight(1, 0, 1, 1.0);
        m.set_weight(1, 0, 2, 1.0);
        let g = m
            .per_sample_gradients(&[vec![0.0, 0.0]], &[Target::Values(vec![1.0])], LossKind::Mse)
            .unwrap();
        for v in &g[0][0..9] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn flatten_roundtrip_and_groups() {
        let mut rng = seeded(4);
        let m = MlpModel::new(&[10, 10, 1], &mut rng);
        assert_eq!(m.param_count(), 121);
        let groups = m.layer_groups();
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![100, 10, 10, 1]);
        let mut covered = vec![false; 121];
        for g in &groups {
            for i in g.clone() {
                assert!(!covered[i]);
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        let v = m.flatten();
        let mut m2 = MlpModel::zeros(&[10, 10, 1]);
        m2.set_from_flat(&v).unwrap();
        assert_eq!(m2.flatten(), v);
    }

    #[test]
    fn no_bias_single_group() {
        let mut rng = seeded(5);
        let m = MlpModel::new_no_bias(&[6, 3], &mut rng);
        let groups = m.layer_groups();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0], 0..18);
    }

    #[test]
    fn hutchinson_quadratic_oracle() {
        // grad of 1/2 w^T A w is A w; the estimate approaches tr(A)
        let a = [[1.0, 0.3, 0.0], [0.3, 2.0, 0.1], [0.0, 0.1, 3.0]];
        let grad = |w: &[f64]| -> Vec<f64> {
            (0..3)
                .map(|i| (0..3).map(|j| a[i][j] * w[j]).sum())
                .collect()
        };
        let w = [0.2, -0.4, 1.0];
        let est = hutchinson_trace(grad, &w, 512, 9);
        assert!((est - 6.0).abs() / 6.0 < 0.05, "{est}");
        // diagonal case is exact for every probe
        let diag_grad = |w: &[f64]| vec![w[0], 2.0 * w[1], 3.0 * w[2]];
        let est = hutchinson_trace(diag_grad, &w, 8, 10);
        assert!((est - 6.0).abs() < 1e-6);
    }

    #[test]
    fn hutchinson_linear_loss_zero() {
        let grad = |_: &[f64]| vec![1.0, -2.0, 0.5];
        let est = hutchinson_trace(grad, &[0.0, 0.0, 0.0], 16, 11);
        assert_eq!(est, 0.0);
    }

    #[test]
    fn exact_fd_quadratic_oracle() {
        let a = [1.0, 2.0, 3.0];
        let loss =
            |w: &[f64]| 0.5 * (a[0] * w[0] * w[0] + a[1] * w[1] * w[1] + a[2] * w[2] * w[2]);
        let t = exact_trace_fd(loss, &[0.3, -0.2, 0.8]);
        assert!((t - 6.0).abs() / 6.0 < 1e-6, "{t}");
        let c = exact_trace_fd(|_| 4.2, &[1.0, 2.0]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn hutchinson_matches_exact_on_model() {
        let mut rng = seeded(6);
        let mut m = MlpModel::new(&[6, 10, 2], &mut rng); // d = 60 + 10 + 20 + 2 = 92
        // lift hidden biases so every unit stays strictly active: finite
        // differences across ReLU kinks corrupt both trace estimators
        for o in 0..10 {
            m.set_bias(0, o, 3.0);
        }
        let inputs: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Target> = (0..64)
            .map(|_| Target::Values(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let exact = hessian_trace_exact_fd(&m, &inputs, &targets, LossKind::Mse).unwrap();
        let est =
            hessian_trace_hutchinson(&m, &inputs, &targets, LossKind::Mse, 512, 7).unwrap();
        assert!(
            (est - exact).abs() / exact.abs().max(1e-9) < 0.05,
            "hutchinson {est} vs exact {exact}"
        );
    }

    #[test]
    fn exact_fd_guards_dimension() {
        let mut rng = seeded(7);
        let m = MlpModel::new(&[60, 60, 10], &mut rng);
        let r = hessian_trace_exact_fd(
            &m,
            &[vec![0.0; 60]],
            &[Target::Class(0)],
            LossKind::SoftmaxCrossEntropy,
        );
        assert!(matches!(r, Err(Error::TooLarge { .. })));
    }

    #[test]
    fn seeded_determinism() {
        let mut r1 = seeded(123);
        let mut r2 = seeded(123);
        let m1 = MlpModel::new(&[4, 4, 2], &mut r1);
        let m2 = MlpModel::new(&[4, 4, 2], &mut r2);
        assert_eq!(m1.flatten(), m2.flatten());
        let inputs = vec![vec![0.1, 0.2, 0.3, 0.4]];
        let targets = vec![Target::Values(vec![1.0, -1.0])];
        let g1 = m1.per_sample_gradients(&inputs, &targets, LossKind::Mse).unwrap();
        let g2 = m2.per_sample_gradients(&inputs, &targets, LossKind::Mse).unwrap();
        assert_eq!(g1, g2);
    }
}
