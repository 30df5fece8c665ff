//! Dataset generation and ingestion: the synthetic regression task, a
//! synthetic classification surrogate for random-label experiments, the IDX
//! loader for MNIST-style files, and label corruption.

use crate::error::{Error, Result};
use crate::nn::Target;
use crate::train::seeds;
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    /// Present for classification datasets.
    pub num_classes: Option<usize>,
}

impl Dataset {
    pub fn regression(inputs: Vec<Vec<f64>>, targets: Vec<Target>) -> Self {
        Dataset {
            inputs,
            targets,
            num_classes: None,
        }
    }

    pub fn classification(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Self {
        let targets = labels.into_iter().map(Target::Class).collect();
        Dataset {
            inputs,
            targets,
            num_classes: Some(num_classes),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map(Vec::len).unwrap_or(0)
    }

    /// Clones the rows selected by `idx`.
    pub fn select(&self, idx: &[u32]) -> (Vec<Vec<f64>>, Vec<Target>) {
        let inputs = idx.iter().map(|&i| self.inputs[i as usize].clone()).collect();
        let targets = idx.iter().map(|&i| self.targets[i as usize].clone()).collect();
        (inputs, targets)
    }

    fn push_flat(&self, i: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.inputs[i]);
        match &self.targets[i] {
            Target::Values(v) => out.extend_from_slice(v),
            Target::Class(c) => out.push(*c as f64),
        }
    }

    /// Concatenation of all (x, y) pairs in index order; the flattening used
    /// when a whole dataset enters a kernel estimate.
    pub fn flatten_all(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            self.push_flat(i, &mut out);
        }
        out
    }

    /// Concatenation of the selected (x, y) pairs in within-batch order.
    pub fn flatten_batch(&self, idx: &[u32]) -> Vec<f64> {
        let mut out = Vec::new();
        for &i in idx {
            self.push_flat(i as usize, &mut out);
        }
        out
    }
}

/// Linear-target regression task y = w.x + eps; the true coefficients are
/// fixed per master seed, datasets are drawn fresh per run seed.
#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    true_w: Vec<f64>,
    input_dim: usize,
    noise_std: f64,
}

impl SyntheticRegression {
    pub fn new(master_seed: u64) -> Self {
        Self::with_dims(master_seed, 10, 0.1)
    }

    pub fn with_dims(master_seed: u64, input_dim: usize, noise_std: f64) -> Self {
        let mut rng = seeds::stream_rng(seeds::derive(master_seed, 0xD00D), seeds::DATA);
        let true_w = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        SyntheticRegression {
            true_w,
            input_dim,
            noise_std,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = seeds::stream_rng(seed, seeds::DATA);
        self.draw(n, &mut rng)
    }

    /// Fresh training set plus a disjoint test set of equal size, drawn from
    /// the same stream.
    pub fn generate_pair(&self, n: usize, seed: u64) -> (Dataset, Dataset) {
        let mut rng = seeds::stream_rng(seed, seeds::DATA);
        let train = self.draw(n, &mut rng);
        let test = self.draw(n, &mut rng);
        (train, test)
    }

    pub fn true_coefficients(&self) -> &[f64] {
        &self.true_w
    }

    fn draw(&self, n: usize, rng: &mut impl Rng) -> Dataset {
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..self.input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut y: f64 = x.iter().zip(self.true_w.iter()).map(|(a, b)| a * b).sum();
            if self.noise_std > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                y += self.noise_std * eps;
            }
            inputs.push(x);
            targets.push(Target::Values(vec![y]));
        }
        Dataset::regression(inputs, targets)
    }
}

/// Classification surrogate for random-label experiments: labels come from
/// the argmax of a fixed random linear teacher.
#[derive(Debug, Clone)]
pub struct SyntheticClassification {
    teacher: Vec<Vec<f64>>,
    input_dim: usize,
    num_classes: usize,
}

impl SyntheticClassification {
    pub fn new(master_seed: u64, input_dim: usize, num_classes: usize) -> Self {
        assert!(num_classes >= 2);
        let mut rng = seeds::stream_rng(seeds::derive(master_seed, 0xC1A5), seeds::DATA);
        let teacher = (0..num_classes)
            .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        SyntheticClassification {
            teacher,
            input_dim,
            num_classes,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = seeds::stream_rng(seed, seeds::DATA);
        self.draw(n, &mut rng)
    }

    pub fn generate_pair(&self, n: usize, seed: u64) -> (Dataset, Dataset) {
        let mut rng = seeds::stream_rng(seed, seeds::DATA);
        let train = self.draw(n, &mut rng);
        let test = self.draw(n, &mut rng);
        (train, test)
    }

    fn draw(&self, n: usize, rng: &mut impl Rng) -> Dataset {
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..self.input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (k, row) in self.teacher.iter().enumerate() {
                let v: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            inputs.push(x);
            labels.push(best);
        }
        Dataset::classification(inputs, labels, self.num_classes)
    }
}

/// Replaces each label independently, with probability `rho`, by a uniform
/// draw over all classes. Deterministic per seed.
pub fn corrupt_labels(dataset: &Dataset, rho: f64, seed: u64) -> Result<Dataset> {
    let k = dataset
        .num_classes
        .ok_or_else(|| Error::InvalidInput("label corruption requires a classification dataset".into()))?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::DomainError(format!("rho must be in [0, 1], got {rho}")));
    }
    let mut rng = seeds::stream_rng(seed, seeds::CORRUPT);
    let mut out = dataset.clone();
    for t in out.targets.iter_mut() {
        if rng.gen::<f64>() < rho {
            *t = Target::Class(rng.gen_range(0..k));
        }
    }
    Ok(out)
}

// --- IDX ingestion ----------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        IdxReader { buf, pos: 0 }
    }
    fn fail<T>(&self, message: &str) -> Result<T> {
        Err(Error::FormatError {
            offset: self.pos as u64,
            message: message.into(),
        })
    }
    fn u32_be(&mut self) -> Result<u32> {
        if self.pos + 4 > self.buf.len() {
            return self.fail("unexpected end of file reading u32");
        }
        let v = u32::from_be_bytes(self.buf[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        self.pos += 4;
        Ok(v)
    }
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.fail("unexpected end of file reading payload");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses an IDX image file (big-endian magic 0x00000803) into row-major
/// pixel vectors scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut r = IdxReader::new(bytes);
    let magic = r.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("bad image magic 0x{magic:08X}, expected 0x00000803"),
        });
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| Error::FormatError {
            offset: 4,
            message: "image dimensions overflow".into(),
        })?;
    let raw = r.bytes(pixels)?;
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after image payload");
    }
    Ok(raw
        .chunks_exact(rows * cols)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect())
}

/// Parses an IDX label file (big-endian magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = IdxReader::new(bytes);
    let magic = r.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("bad label magic 0x{magic:08X}, expected 0x00000801"),
        });
    }
    let count = r.u32_be()? as usize;
    let raw = r.bytes(count)?;
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after label payload");
    }
    Ok(raw.to_vec())
}

/// Loads an MNIST-style pair of IDX files and uniformly subsamples
/// `subsample_n` examples without replacement, deterministically per seed.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    subsample_n: usize,
    seed: u64,
) -> Result<Dataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "image count {} does not match label count {}",
            images.len(),
            labels.len()
        )));
    }
    if subsample_n == 0 || subsample_n > images.len() {
        return Err(Error::InvalidInput(format!(
            "subsample_n must be in [1, {}]",
            images.len()
        )));
    }
    let mut idx: Vec<usize> = (0..images.len()).collect();
    let mut rng = seeds::stream_rng(seed, seeds::DATA);
    // partial Fisher-Yates: the first subsample_n entries become the sample
    for i in 0..subsample_n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(subsample_n);
    let inputs = idx.iter().map(|&i| images[i].clone()).collect();
    let labels = idx.iter().map(|&i| labels[i] as usize).collect();
    Ok(Dataset::classification(inputs, labels, 10))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_bit_identical_per_seed() {
        let task = SyntheticRegression::new(7);
        let a = task.generate(20, 3);
        let b = task.generate(20, 3);
        assert_eq!(a, b);
        let c = task.generate(20, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_zero_noise_exactly_linear() {
        let task = SyntheticRegression::with_dims(7, 5, 0.0);
        let w = task.true_coefficients().to_vec();
        let ds = task.generate(10, 1);
        for i in 0..ds.len() {
            let Target::Values(y) = &ds.targets[i] else {
                unreachable!()
            };
            let lin: f64 = ds.inputs[i].iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            assert_eq!(y[0], lin);
        }
    }

    #[test]
    fn synthetic_noise_moment() {
        // empirical Var[eps] over 1e5 draws within 5% of 0.01,
        // with eps recovered as y - w.x from the known coefficients
        let task = SyntheticRegression::new(11);
        let w = task.true_coefficients().to_vec();
        let n = 100_000;
        let ds = task.generate(n, 5);
        let mut acc = 0.0;
        for i in 0..n {
            let Target::Values(y) = &ds.targets[i] else {
                unreachable!()
            };
            let lin: f64 = ds.inputs[i].iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let eps = y[0] - lin;
            acc += eps * eps;
        }
        let var = acc / n as f64;
        assert!((var - 0.01).abs() / 0.01 < 0.05, "var {var}");
    }

    #[test]
    fn classification_labels_in_range() {
        let task = SyntheticClassification::new(3, 10, 4);
        let ds = task.generate(200, 9);
        assert_eq!(ds.num_classes, Some(4));
        for t in &ds.targets {
            match t {
                Target::Class(c) => assert!(*c < 4),
                _ => panic!("expected class target"),
            }
        }
        // all classes appear in a decent sample
        let mut seen = [false; 4];
        for t in &ds.targets {
            if let Target::Class(c) = t {
                seen[*c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn corrupt_rho_zero_unchanged() {
        let task = SyntheticClassification::new(3, 6, 3);
        let ds = task.generate(50, 1);
        let out = corrupt_labels(&ds, 0.0, 17).unwrap();
        assert_eq!(ds, out);
    }

    #[test]
    fn corrupt_rho_one_binomial_check() {
        let k = 5;
        let n = 5000;
        let task = SyntheticClassification::new(4, 6, k);
        let ds = task.generate(n, 2);
        let out = corrupt_labels(&ds, 1.0, 23).unwrap();
        let same = ds
            .targets
            .iter()
            .zip(out.targets.iter())
            .filter(|(a, b)| a == b)
            .count() as f64;
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (same - mean).abs() <= 3.0 * sd,
            "{same} matches vs expected {mean} +- {sd}"
        );
    }

    #[test]
    fn corrupt_same_seed_same_mask() {
        let task = SyntheticClassification::new(5, 6, 3);
        let ds = task.generate(100, 3);
        let a = corrupt_labels(&ds, 0.4, 31).unwrap();
        let b = corrupt_labels(&ds, 0.4, 31).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_rejects_regression() {
        let task = SyntheticRegression::new(6);
        let ds = task.generate(10, 1);
        assert!(matches!(
            corrupt_labels(&ds, 0.5, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    fn make_idx_pair(n: usize, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&(rows as u32).to_be_bytes());
        img.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..n * rows * cols {
            img.push((i % 251) as u8);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            lab.push((i % 10) as u8);
        }
        (img, lab)
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let (img, lab) = make_idx_pair(7, 4, 3);
        let images = parse_idx_images(&img).unwrap();
        assert_eq!(images.len(), 7);
        assert_eq!(images[0].len(), 12);
        assert_eq!(images[0][1], 1.0 / 255.0);
        let labels = parse_idx_labels(&lab).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn idx_full_subsample_is_identity_up_to_order() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = make_idx_pair(20, 2, 2);
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let ds = load_mnist_idx(&ip, &lp, 20, 9).unwrap();
        assert_eq!(ds.len(), 20);
        let mut labels: Vec<usize> = ds
            .targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => *c,
                _ => unreachable!(),
            })
            .collect();
        labels.sort_unstable();
        let mut expect: Vec<usize> = (0..20).map(|i| i % 10).collect();
        expect.sort_unstable();
        assert_eq!(labels, expect);
    }

    #[test]
    fn idx_subsample_deterministic_and_near_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = make_idx_pair(2000, 2, 2);
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let a = load_mnist_idx(&ip, &lp, 600, 5).unwrap();
        let b = load_mnist_idx(&ip, &lp, 600, 5).unwrap();
        assert_eq!(a, b);
        let mut hist = [0usize; 10];
        for t in &a.targets {
            if let Target::Class(c) = t {
                hist[*c] += 1;
            }
        }
        for &h in &hist {
            let expected = 60.0;
            assert!(
                (h as f64 - expected).abs() <= 0.2 * expected,
                "class count {h} outside 20% of {expected}"
            );
        }
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let (mut img, _) = make_idx_pair(3, 2, 2);
        img[0..4].copy_from_slice(&0xDEADBEEFu32.to_be_bytes());
        match parse_idx_images(&img) {
            Err(Error::FormatError { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected FormatError, got {other:?}"),
        }
    }

    #[test]
    fn idx_rejects_truncation_with_offset() {
        let (img, lab) = make_idx_pair(3, 2, 2);
        let cut = &img[..img.len() - 2];
        match parse_idx_images(cut) {
            Err(Error::FormatError { offset, .. }) => assert!(offset >= 16),
            other => panic!("expected FormatError, got {other:?}"),
        }
        let cut = &lab[..lab.len() - 1];
        assert!(matches!(
            parse_idx_labels(cut),
            Err(Error::FormatError { .. })
        ));
    }

    #[test]
    fn flatten_orders_are_stable() {
        let task = SyntheticRegression::with_dims(2, 3, 0.1);
        let ds = task.generate(4, 1);
        let all = ds.flatten_all();
        assert_eq!(all.len(), 4 * 4);
        let batch = ds.flatten_batch(&[2, 0]);
        assert_eq!(batch.len(), 8);
        assert_eq!(&batch[0..3], ds.inputs[2].as_slice());
        if let Target::Values(v) = &ds.targets[2] {
            assert_eq!(batch[3], v[0]);
        }
    }
}
