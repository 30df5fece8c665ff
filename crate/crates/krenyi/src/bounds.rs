//! Bound calculators: per-step gradient statistics, the theta_c / theta_v
//! family and its partitioned middle term, the per-step information-bound
//! sums for SGLD and SGD, the sub-gaussian loss-range constant, and the
//! final generalization bounds.
//!
//! theta_c(V) = 1/2 log|eta^2/sigma^2 V + I| uses the full covariance;
//! theta_v(V) = d/2 log(eta^2 V / (d sigma^2) + 1) uses only the trace.
//! For any disjoint partition of the coordinates,
//! theta_c(V) <= sum_i theta_c(V_i) <= theta_v(tr V) <= theta_v(L).

use crate::error::{Error, Result};
use crate::matrix::{self, SymMatrix};
use serde::{Deserialize, Serialize};

/// Largest dimension for which a dense covariance is formed.
pub const MAX_DENSE_COV_DIM: usize = 1024;

/// Per-step gradient statistics extracted from the per-sample gradients of
/// one batch. `cov` estimates the covariance of the batch-mean gradient
/// (within-batch sample covariance scaled by 1/b).
#[derive(Debug, Clone)]
pub struct GradientStats {
    pub step: usize,
    pub mean_gradient: Vec<f64>,
    pub cov: SymMatrix,
    pub scalar_var: f64,
    pub max_sq_norm: f64,
}

/// Builds [`GradientStats`] from one batch of per-sample gradients,
/// carrying the running max squared per-sample gradient norm forward.
pub fn grad_stats(
    per_sample_grads: &[Vec<f64>],
    step: usize,
    prev_max_sq_norm: f64,
) -> Result<GradientStats> {
    if per_sample_grads.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: per_sample_grads.len(),
        });
    }
    let d = per_sample_grads[0].len();
    if d > MAX_DENSE_COV_DIM {
        return Err(Error::TooLarge {
            dim: d,
            max: MAX_DENSE_COV_DIM,
        });
    }
    let cov = matrix::sample_covariance(per_sample_grads, true)?;
    let scalar_var = cov.trace();
    let mut max_sq = prev_max_sq_norm;
    for g in per_sample_grads {
        let n: f64 = g.iter().map(|v| v * v).sum();
        if n > max_sq {
            max_sq = n;
        }
    }
    Ok(GradientStats {
        step,
        mean_gradient: crate::nn::mean_vector(per_sample_grads),
        cov,
        scalar_var,
        max_sq_norm: max_sq,
    })
}

/// theta_c(V) = 1/2 log|eta^2/sigma2 V + I|.
pub fn theta_c(cov: &SymMatrix, eta: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    matrix::logdet_shifted(cov, eta * eta / sigma2)
}

/// theta_v(V) = d/2 log(eta^2 V / (d sigma2) + 1).
pub fn theta_v(scalar_var: f64, eta: f64, sigma2: f64, d: usize) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    if d == 0 {
        return Err(Error::DomainError("d must be >= 1".into()));
    }
    if !(scalar_var >= 0.0) {
        return Err(Error::DomainError("variance must be >= 0".into()));
    }
    let df = d as f64;
    let c = eta * eta / sigma2;
    Ok(df * (0.5 * (c * scalar_var / df).ln_1p()))
}

fn validate_partition(partition: &[Vec<usize>], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    let mut count = 0usize;
    for part in partition {
        if part.is_empty() {
            return Err(Error::InvalidPartition("empty part".into()));
        }
        for w in part.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidPartition(
                    "part indices must be strictly increasing".into(),
                ));
            }
        }
        for &i in part {
            if i >= d {
                return Err(Error::InvalidPartition(format!(
                    "index {i} out of range for dim {d}"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!("index {i} repeated")));
            }
            seen[i] = true;
            count += 1;
        }
    }
    if count != d {
        return Err(Error::InvalidPartition(format!(
            "partition covers {count} of {d} coordinates"
        )));
    }
    Ok(())
}

/// Sum of theta_c over the principal submatrices of a disjoint partition;
/// sandwiched between theta_c of the full matrix and theta_v of its trace.
pub fn theta_c_partitioned(
    cov: &SymMatrix,
    partition: &[Vec<usize>],
    eta: f64,
    sigma2: f64,
) -> Result<f64> {
    validate_partition(partition, cov.dim())?;
    let mut acc = 0.0;
    for part in partition {
        let sub = matrix::principal_submatrix(cov, part)?;
        acc += theta_c(&sub, eta, sigma2)?;
    }
    Ok(acc)
}

/// Which per-step term a bound accumulates.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundMode {
    /// 1/2 log|eta^2/sigma2 V_t + I| on the full covariance.
    Thm2Cov,
    /// Sum of theta_c over the given coordinate partition.
    Thm2Partitioned(Vec<Vec<usize>>),
    /// eta^2 V_t / (2 sigma2) on the scalar variance.
    Lemma2Var,
    /// d/2 log(eta^2 L / (d sigma2) + 1) with the running max L.
    Lemma1L,
}

/// Sum of the selected per-step term over an SGLD trajectory's statistics.
pub fn sgld_info_bound(
    stats: &[GradientStats],
    eta: f64,
    sigma2: f64,
    mode: &BoundMode,
) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("empty statistics list".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let d = stats[0].mean_gradient.len();
    // L is the global running max; the last step carries it
    let l_max = stats.last().expect("non-empty").max_sq_norm;
    let mut acc = 0.0;
    for s in stats {
        acc += match mode {
            BoundMode::Thm2Cov => theta_c(&s.cov, eta, sigma2)?,
            BoundMode::Thm2Partitioned(p) => theta_c_partitioned(&s.cov, p, eta, sigma2)?,
            BoundMode::Lemma2Var => eta * eta * s.scalar_var / (2.0 * sigma2),
            BoundMode::Lemma1L => theta_v(l_max, eta, sigma2, d)?,
        };
    }
    Ok(acc)
}

/// The SGD variant: the same information term evaluated with the virtual
/// noise variance, plus the Hessian term 1/2 T sigma2 E[tr H] of the
/// auxiliary-process decomposition. Returns (info_term, hessian_term).
pub fn sgd_info_bound(
    stats: &[GradientStats],
    eta: f64,
    virtual_sigma2: f64,
    hessian_trace_estimate: f64,
    mode: &BoundMode,
) -> Result<(f64, f64)> {
    let info = sgld_info_bound(stats, eta, virtual_sigma2, mode)?;
    let hessian_term = 0.5 * stats.len() as f64 * virtual_sigma2 * hessian_trace_estimate;
    Ok((info, hessian_term))
}

/// R = (max - min) / 2 over the recorded batch losses.
pub fn subgaussian_r(batch_losses: &[f64]) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::InvalidInput("empty loss list".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in batch_losses {
        if !l.is_finite() {
            return Err(Error::InvalidInput("non-finite loss".into()));
        }
        lo = lo.min(l);
        hi = hi.max(l);
    }
    Ok(0.5 * (hi - lo))
}

/// Generalization bounds from an information quantity: the mean bound
/// sqrt(2 R^2 I / n) and the second-moment bound 4 R^2 (I + log 3) / n.
/// Negative information estimates are clamped to zero.
pub fn thm1_bounds(info: f64, r: f64, n: usize) -> (f64, f64) {
    let info = info.max(0.0);
    let nf = n.max(1) as f64;
    let mean = (2.0 * r * r * info / nf).sqrt();
    let second = 4.0 * r * r * (info + 3.0f64.ln()) / nf;
    (mean, second)
}

/// One per-epoch row of the experiment report.
///
/// The `theta_*` columns accumulate bound terms whose V_t estimate is the
/// covariance of the batch-mean gradient (within-batch sample covariance
/// scaled by 1/b, averaged across runs at the same step). The `_shift`
/// column instead uses the across-run covariance of the batch-mean
/// gradients, which also captures the parameter-mixture spread. The `_psc`
/// columns use the per-sample gradient covariance (no 1/b), a larger, more
/// conservative estimate matching per-sample tooling conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub true_gap: f64,
    pub r_subgaussian: f64,
    /// MI estimates are absent when estimation is disabled.
    pub iws: Option<f64>,
    pub iwbw: Option<f64>,
    pub thm1_from_iws: Option<f64>,
    pub thm1_from_iwbw: Option<f64>,
    pub theta_c_sum: f64,
    pub theta_c_part_sum: f64,
    pub theta_v_sum: f64,
    pub lemma2_sum: f64,
    pub lemma1_sum: f64,
    pub theta_c_shift_sum: f64,
    pub theta_c_psc_sum: f64,
    pub theta_c_part_psc_sum: f64,
    pub theta_v_psc_sum: f64,
    pub lemma2_psc_sum: f64,
    pub thm1_from_theta_c_psc: f64,
    pub thm1_from_theta_v_psc: f64,
    pub sgd_hessian_term: Option<f64>,
}

impl EpochRow {
    pub const COLUMNS: [&'static str; 20] = [
        "epoch",
        "true_gap",
        "r_subgaussian",
        "iws",
        "iwbw",
        "thm1_from_iws",
        "thm1_from_iwbw",
        "theta_c_sum",
        "theta_c_part_sum",
        "theta_v_sum",
        "lemma2_sum",
        "lemma1_sum",
        "theta_c_shift_sum",
        "theta_c_psc_sum",
        "theta_c_part_psc_sum",
        "theta_v_psc_sum",
        "lemma2_psc_sum",
        "thm1_from_theta_c_psc",
        "thm1_from_theta_v_psc",
        "sgd_hessian_term",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<EpochRow>,
    pub requested_runs: usize,
    /// Runs that finished without diverging; only these enter the averages.
    pub effective_runs: usize,
    pub n_train: usize,
    pub excluded_runs: Vec<usize>,
}

impl BoundReport {
    /// Checks the internal ordering invariants of every row.
    pub fn validate(&self) -> Result<()> {
        const SLACK: f64 = 1e-9;
        for row in &self.rows {
            let nonneg = [
                ("r_subgaussian", row.r_subgaussian),
                ("iwbw", row.iwbw.unwrap_or(0.0)),
                ("thm1_from_iws", row.thm1_from_iws.unwrap_or(0.0)),
                ("thm1_from_iwbw", row.thm1_from_iwbw.unwrap_or(0.0)),
                ("theta_c_sum", row.theta_c_sum),
                ("theta_c_part_sum", row.theta_c_part_sum),
                ("theta_v_sum", row.theta_v_sum),
                ("lemma2_sum", row.lemma2_sum),
                ("lemma1_sum", row.lemma1_sum),
                ("theta_c_shift_sum", row.theta_c_shift_sum),
                ("theta_c_psc_sum", row.theta_c_psc_sum),
                ("theta_c_part_psc_sum", row.theta_c_part_psc_sum),
                ("theta_v_psc_sum", row.theta_v_psc_sum),
                ("lemma2_psc_sum", row.lemma2_psc_sum),
            ];
            for (name, v) in nonneg {
                if !(v >= -SLACK) {
                    return Err(Error::InvalidInput(format!(
                        "epoch {}: column {name} is negative ({v})",
                        row.epoch
                    )));
                }
            }
            for (scale, c, p, v) in [
                ("", row.theta_c_sum, row.theta_c_part_sum, row.theta_v_sum),
                (
                    "_psc",
                    row.theta_c_psc_sum,
                    row.theta_c_part_psc_sum,
                    row.theta_v_psc_sum,
                ),
            ] {
                if c > p + SLACK || p > v + SLACK {
                    return Err(Error::InvalidInput(format!(
                        "epoch {}: theta chain{} violated: {c} <= {p} <= {v}",
                        row.epoch, scale
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        SymMatrix::from_upper_fn(n, |i, j| {
            (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() / n as f64
        })
    }

    #[test]
    fn grad_stats_hand_case() {
        let grads = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = grad_stats(&grads, 1, 0.0).unwrap();
        assert!((s.cov.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.cov.get(0, 1) + 0.25).abs() < 1e-15);
        assert!((s.scalar_var - 0.5).abs() < 1e-15);
        assert_eq!(s.max_sq_norm, 1.0);
        assert_eq!(s.mean_gradient, vec![0.5, 0.5]);
    }

    #[test]
    fn grad_stats_identical_gradients() {
        let grads = vec![vec![2.0, -1.0]; 4];
        let s = grad_stats(&grads, 1, 0.0).unwrap();
        assert!(s.cov.as_slice().iter().all(|&v| v.abs() < 1e-15));
        assert_eq!(s.scalar_var, 0.0);
        assert_eq!(s.max_sq_norm, 5.0);
    }

    #[test]
    fn grad_stats_running_max_monotone() {
        let big = grad_stats(&[vec![3.0], vec![-3.0]], 1, 0.0).unwrap();
        let small = grad_stats(&[vec![0.1], vec![-0.1]], 2, big.max_sq_norm).unwrap();
        assert_eq!(small.max_sq_norm, 9.0);
    }

    #[test]
    fn theta_c_zero_matrix() {
        let z = SymMatrix::zeros(3);
        assert_eq!(theta_c(&z, 0.1, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn theta_c_worked_2x2() {
        let v = SymMatrix::from_row_major(2, vec![1.0, 0.9, 0.9, 1.0]).unwrap();
        // eta^2/sigma2 = 1: 1/2 log det [[2, .9], [.9, 2]] = 1/2 log 3.19
        let got = theta_c(&v, 1.0, 1.0).unwrap();
        assert!((got - 0.5800104583983766).abs() < 1e-12, "{got}");
    }

    #[test]
    fn theta_c_diagonal_closed_form() {
        let v = SymMatrix::from_diag(&[2.0, 5.0]);
        let c: f64 = 0.3;
        let got = theta_c(&v, c.sqrt(), 1.0).unwrap();
        let want = 0.5 * ((c * 2.0f64).ln_1p() + (c * 5.0f64).ln_1p());
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn theta_c_rejects_zero_noise() {
        let v = SymMatrix::identity(2);
        assert!(matches!(theta_c(&v, 0.1, 0.0), Err(Error::DegenerateNoise)));
        assert!(matches!(
            theta_v(1.0, 0.1, 0.0, 2),
            Err(Error::DegenerateNoise)
        ));
    }

    #[test]
    fn theta_v_values() {
        assert_eq!(theta_v(0.0, 0.5, 1e-2, 7).unwrap(), 0.0);
        // d = 2, V = 2, eta^2/sigma2 = 1 -> log 2
        let got = theta_v(2.0, 1.0, 1.0, 2).unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
        // and it dominates the worked theta_c example
        assert!(got >= 0.5800104583983766);
    }

    #[test]
    fn theta_v_d1_equals_theta_c_bitwise() {
        for &v in &[0.0, 0.3, 2.0, 117.5] {
            for &(eta, s2) in &[(0.001, 1e-3), (0.1, 1e-5), (1.0, 1.0)] {
                let a = theta_v(v, eta, s2, 1).unwrap();
                let b = theta_c(&SymMatrix::from_diag(&[v]), eta, s2).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "v={v} eta={eta} s2={s2}");
            }
        }
    }

    #[test]
    fn partitioned_full_block_matches_theta_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_psd(&mut rng, 6);
        let full: Vec<usize> = (0..6).collect();
        let a = theta_c_partitioned(&v, &[full], 0.3, 1e-2).unwrap();
        let b = theta_c(&v, 0.3, 1e-2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn partitioned_singletons_closed_form() {
        let v = SymMatrix::from_row_major(2, vec![1.0, 0.9, 0.9, 1.0]).unwrap();
        let parts: Vec<Vec<usize>> = vec![vec![0], vec![1]];
        let got = theta_c_partitioned(&v, &parts, 1.0, 1.0).unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
        // worked sandwich: theta_c <= partitioned <= theta_v
        let tc = theta_c(&v, 1.0, 1.0).unwrap();
        let tv = theta_v(v.trace(), 1.0, 1.0, 2).unwrap();
        assert!(tc <= got + 1e-12 && got <= tv + 1e-12);
    }

    #[test]
    fn partitioned_rejects_bad_partitions() {
        let v = SymMatrix::identity(3);
        assert!(matches!(
            theta_c_partitioned(&v, &[vec![0, 1]], 1.0, 1.0),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            theta_c_partitioned(&v, &[vec![0, 1], vec![1, 2]], 1.0, 1.0),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            theta_c_partitioned(&v, &[vec![0, 1], vec![2, 5]], 1.0, 1.0),
            Err(Error::InvalidPartition(_))
        ));
    }

    fn random_partition(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<usize>> {
        let r = rng.gen_range(1..=d);
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); r];
        for i in 0..d {
            parts[rng.gen_range(0..r)].push(i);
        }
        parts.retain(|p| !p.is_empty());
        parts
    }

    #[test]
    fn proposition_chain_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let d = rng.gen_range(1..=16);
            let v = random_psd(&mut rng, d);
            let parts = random_partition(&mut rng, d);
            let ratio = rng.gen::<f64>() * 1e3;
            let ratio = if ratio <= 0.0 { 1.0 } else { ratio };
            let eta = ratio.sqrt();
            let sigma2 = 1.0;
            let tc = theta_c(&v, eta, sigma2).unwrap();
            let tp = theta_c_partitioned(&v, &parts, eta, sigma2).unwrap();
            let tv = theta_v(v.trace(), eta, sigma2, d).unwrap();
            let l = v.trace() * (1.0 + rng.gen::<f64>());
            let tl = theta_v(l, eta, sigma2, d).unwrap();
            assert!(tc <= tp + 1e-9, "theta_c {tc} > partitioned {tp}");
            assert!(tp <= tv + 1e-9, "partitioned {tp} > theta_v {tv}");
            assert!(tv <= tl + 1e-9, "theta_v {tv} > theta_v(L) {tl}");
        }
    }

    #[test]
    fn refinement_never_decreases_partitioned_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let d = rng.gen_range(2..=12);
            let v = random_psd(&mut rng, d);
            let coarse = random_partition(&mut rng, d);
            // refine: split every part of size > 1 in two
            let mut fine = Vec::new();
            for p in &coarse {
                if p.len() > 1 {
                    let cut = p.len() / 2;
                    fine.push(p[..cut].to_vec());
                    fine.push(p[cut..].to_vec());
                } else {
                    fine.push(p.clone());
                }
            }
            let a = theta_c_partitioned(&v, &coarse, 0.7, 1e-2).unwrap();
            let b = theta_c_partitioned(&v, &fine, 0.7, 1e-2).unwrap();
            assert!(a <= b + 1e-9, "refinement decreased the sum: {a} > {b}");
        }
    }

    fn stats_from(cov: SymMatrix, max_sq: f64) -> GradientStats {
        let d = cov.dim();
        GradientStats {
            step: 1,
            mean_gradient: vec![0.0; d],
            scalar_var: cov.trace(),
            cov,
            max_sq_norm: max_sq,
        }
    }

    #[test]
    fn info_bound_zero_covariance() {
        let s = stats_from(SymMatrix::zeros(2), 0.0);
        for mode in [
            BoundMode::Thm2Cov,
            BoundMode::Thm2Partitioned(vec![vec![0], vec![1]]),
            BoundMode::Lemma2Var,
            BoundMode::Lemma1L,
        ] {
            let v = sgld_info_bound(std::slice::from_ref(&s), 1.0, 1.0, &mode).unwrap();
            assert_eq!(v, 0.0, "{mode:?}");
        }
    }

    #[test]
    fn info_bound_worked_values() {
        let cov = SymMatrix::from_row_major(2, vec![1.0, 0.9, 0.9, 1.0]).unwrap();
        let s = stats_from(cov, 4.0);
        let tc = sgld_info_bound(std::slice::from_ref(&s), 1.0, 1.0, &BoundMode::Thm2Cov).unwrap();
        assert!((tc - 0.5800104583983766).abs() < 1e-12);
        let l1 = sgld_info_bound(std::slice::from_ref(&s), 1.0, 1.0, &BoundMode::Lemma1L).unwrap();
        // d = 2, L = 4, eta^2/sigma2 = 1 -> log 3
        assert!((l1 - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cumulative_sums_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats: Vec<GradientStats> = (0..12)
            .map(|i| {
                let mut s = stats_from(random_psd(&mut rng, 4), 0.0);
                s.step = i + 1;
                s.max_sq_norm = 2.0;
                s
            })
            .collect();
        let mut prev = 0.0;
        for k in 1..=stats.len() {
            let v = sgld_info_bound(&stats[..k], 0.1, 1e-3, &BoundMode::Thm2Cov).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn sgd_bound_matches_sgld_path() {
        let cov = SymMatrix::from_row_major(2, vec![1.0, 0.9, 0.9, 1.0]).unwrap();
        let s = stats_from(cov, 4.0);
        let (info, hess) =
            sgd_info_bound(std::slice::from_ref(&s), 1.0, 1.0, 0.0, &BoundMode::Thm2Cov).unwrap();
        let sgld = sgld_info_bound(std::slice::from_ref(&s), 1.0, 1.0, &BoundMode::Thm2Cov).unwrap();
        assert_eq!(info.to_bits(), sgld.to_bits());
        assert_eq!(hess, 0.0);
        // hessian term: 1/2 * T * sigma2 * trace
        let (_, hess) =
            sgd_info_bound(std::slice::from_ref(&s), 1.0, 2e-3, 5.0, &BoundMode::Thm2Cov).unwrap();
        assert!((hess - 0.5 * 1.0 * 2e-3 * 5.0).abs() < 1e-15);
    }

    #[test]
    fn subgaussian_r_values() {
        assert_eq!(subgaussian_r(&[0.2, 1.0, 0.6]).unwrap(), 0.4);
        assert_eq!(subgaussian_r(&[0.7, 0.7]).unwrap(), 0.0);
        assert!(matches!(subgaussian_r(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn thm1_plugin_values() {
        let (mean, second) = thm1_bounds(2.0, 0.5, 100);
        assert!((mean - 0.1).abs() < 1e-15);
        assert!((second - 0.0309861228866811).abs() < 1e-12);
        let (mean, second) = thm1_bounds(0.0, 0.5, 100);
        assert_eq!(mean, 0.0);
        assert!((second - 4.0 * 0.25 * 3.0f64.ln() / 100.0).abs() < 1e-15);
        // negative estimates clamp to zero
        let (mean, _) = thm1_bounds(-0.3, 0.5, 100);
        assert_eq!(mean, 0.0);
    }
}
