//! Quick self-contained oracle and property checks, runnable from the CLI.
//! These are fast spot checks of the same invariants the test suite covers
//! in depth.

use crate::error::{Error, Result};
use crate::kernel::{self, KernelSpec};
use crate::matrix::{self, SymMatrix};
use crate::nn::{self, LossKind, MlpModel, Target};
use crate::train::{self, seeds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<()>,
}

fn fail(msg: String) -> Result<()> {
    Err(Error::InvalidInput(msg))
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    SymMatrix::from_upper_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let b: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    SymMatrix::from_upper_fn(n, |i, j| {
        (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() / n as f64
    })
}

fn eigen_reconstruction() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_sym(&mut rng, 32);
    let e = matrix::sym_eigen(&s)?;
    let err = e.reconstruction_error(&s);
    let tol = 1e-8 * s.frobenius_norm().max(1.0);
    if err > tol {
        return fail(format!("reconstruction error {err} > {tol}"));
    }
    if e.orthogonality_error() > 1e-8 {
        return fail("eigenvector orthogonality above 1e-8".into());
    }
    Ok(())
}

fn entropy_uniform_spectrum() -> Result<()> {
    let k = SymMatrix::from_diag(&vec![1.0 / 8.0; 8]);
    let h = matrix::vn_entropy(&k)?;
    if (h - 8.0f64.ln()).abs() > 1e-12 {
        return fail(format!("entropy of I/8 was {h}"));
    }
    Ok(())
}

fn entropy_matches_gaussian_closed_form() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 500;
    let samples: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect();
    let kernel = KernelSpec::gaussian(0.5, 1)?;
    let est = kernel::entropy_estimate(&samples, &kernel, true)?;
    let closed = kernel::gaussian_closed_form(&SymMatrix::from_diag(&[1.0]), 0.5)?;
    let dev = (est.value - closed).abs();
    if dev > est.concentration_radius_at_95 {
        return fail(format!(
            "deviation {dev} exceeds radius {}",
            est.concentration_radius_at_95
        ));
    }
    Ok(())
}

fn quadrature_agrees_with_closed_form() -> Result<()> {
    let kernel = KernelSpec::gaussian(0.5, 1)?;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let q = kernel::quadrature_entropy_1d(pdf, &kernel, (-8.0, 8.0))?;
    let c = kernel::gaussian_closed_form(&SymMatrix::from_diag(&[1.0]), 0.5)?;
    if (q - c).abs() > 1e-3 {
        return fail(format!("quadrature {q} vs closed form {c}"));
    }
    Ok(())
}

fn theta_chain_holds() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let d = rng.gen_range(1..=10);
        let v = random_psd(&mut rng, d);
        let eta = (rng.gen::<f64>() * 30.0 + 1e-3).sqrt();
        let tc = crate::bounds::theta_c(&v, eta, 1.0)?;
        let parts: Vec<Vec<usize>> = (0..d).map(|i| vec![i]).collect();
        let tp = crate::bounds::theta_c_partitioned(&v, &parts, eta, 1.0)?;
        let tv = crate::bounds::theta_v(v.trace(), eta, 1.0, d)?;
        if !(tc <= tp + 1e-9 && tp <= tv + 1e-9) {
            return fail(format!("chain violated: {tc} / {tp} / {tv}"));
        }
    }
    Ok(())
}

fn determinant_inequality() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.gen_range(2..=10);
        let v = random_psd(&mut rng, n);
        let split = rng.gen_range(1..n);
        let ia: Vec<usize> = (0..split).collect();
        let ib: Vec<usize> = (split..n).collect();
        let det = |m: &SymMatrix| -> Result<f64> {
            Ok(matrix::sym_eigenvalues(m)?.iter().product())
        };
        let dv = det(&v)?;
        let da = det(&matrix::principal_submatrix(&v, &ia)?)?;
        let db = det(&matrix::principal_submatrix(&v, &ib)?)?;
        if dv > da * db + 1e-9 {
            return fail(format!("det {dv} > {}", da * db));
        }
    }
    Ok(())
}

fn gradient_matches_finite_differences() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = MlpModel::new(&[4, 6, 2], &mut rng);
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Target> = (0..3)
        .map(|_| Target::Values(vec![rng.gen(), rng.gen()]))
        .collect();
    let g = m.mean_gradient(&inputs, &targets, LossKind::Mse)?;
    let w = m.flatten();
    let mut wt = w.clone();
    for i in 0..w.len() {
        let h = 1e-5;
        wt[i] = w[i] + h;
        let fp = m.with_params(&wt)?.forward(&inputs, &targets, LossKind::Mse)?.1;
        wt[i] = w[i] - h;
        let fm = m.with_params(&wt)?.forward(&inputs, &targets, LossKind::Mse)?.1;
        wt[i] = w[i];
        let fd = (fp - fm) / (2.0 * h);
        if (g[i] - fd).abs() / g[i].abs().max(1e-3) > 1e-5 {
            return fail(format!("coordinate {i}: analytic {} vs fd {fd}", g[i]));
        }
    }
    Ok(())
}

fn hutchinson_agrees_with_exact() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = MlpModel::new(&[6, 10, 2], &mut rng);
    // keep hidden units strictly active so the difference probes stay on one
    // smooth piece of the ReLU landscape
    for o in 0..10 {
        m.set_bias(0, o, 3.0);
    }
    let inputs: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Target> = (0..64)
        .map(|_| Target::Values(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
        .collect();
    let exact = nn::hessian_trace_exact_fd(&m, &inputs, &targets, LossKind::Mse)?;
    let est = nn::hessian_trace_hutchinson(&m, &inputs, &targets, LossKind::Mse, 512, 7)?;
    if (est - exact).abs() / exact.abs().max(1e-9) > 0.05 {
        return fail(format!("hutchinson {est} vs exact {exact}"));
    }
    Ok(())
}

fn sgld_replays_bit_identically() -> Result<()> {
    let task = crate::data::SyntheticRegression::new(9);
    let ds = task.generate(20, 1);
    let cfg = train::TrainConfig {
        algorithm: train::Algorithm::Sgld,
        eta: 0.01,
        sigma2: 1e-3,
        epochs: 2,
        batch_size: 5,
        seed: 33,
        record_every: 1,
        record_grads: false,
    };
    let mut rng = seeds::stream_rng(33, seeds::INIT);
    let model = MlpModel::new(&[10, 5, 1], &mut rng);
    let a = train::run_training(&model, &ds, None, LossKind::Mse, &cfg)?;
    let b = train::run_training(&model, &ds, None, LossKind::Mse, &cfg)?;
    if a != b {
        return fail("trajectories differ across replays".into());
    }
    Ok(())
}

fn concentration_radius_value() -> Result<()> {
    let r = kernel::concentration_radius(1000, 0.05, 1.0)?;
    if (r - 2.4445827283331156).abs() > 1e-12 {
        return fail(format!("radius {r}"));
    }
    Ok(())
}

fn mi_nonnegative_raw() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let m = rng.gen_range(5..40);
        let d = rng.gen_range(1..4);
        let xs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let kx = KernelSpec::gaussian(kernel::select_width(&xs, 0.15)?, d)?;
        let ky = KernelSpec::gaussian(kernel::select_width(&ys, 0.15)?, d)?;
        let v = kernel::mi_estimate(&xs, &ys, &kx, &ky, false)?;
        if v < -1e-9 {
            return fail(format!("raw MI {v} below -1e-9"));
        }
    }
    Ok(())
}

/// Runs every check, returning the outcomes in order.
pub fn run_all() -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, fn() -> Result<()>)> = vec![
        ("eigen_reconstruction", eigen_reconstruction),
        ("entropy_uniform_spectrum", entropy_uniform_spectrum),
        ("entropy_gaussian_closed_form", entropy_matches_gaussian_closed_form),
        ("quadrature_vs_closed_form", quadrature_agrees_with_closed_form),
        ("theta_chain", theta_chain_holds),
        ("determinant_inequality", determinant_inequality),
        ("gradient_finite_differences", gradient_matches_finite_differences),
        ("hutchinson_vs_exact_trace", hutchinson_agrees_with_exact),
        ("sgld_replay_determinism", sgld_replays_bit_identically),
        ("concentration_radius", concentration_radius_value),
        ("raw_mi_nonnegative", mi_nonnegative_raw),
    ];
    checks
        .into_iter()
        .map(|(name, f)| CheckOutcome { name, result: f() })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_selftests_pass() {
        for outcome in super::run_all() {
            assert!(
                outcome.result.is_ok(),
                "{} failed: {:?}",
                outcome.name,
                outcome.result
            );
        }
    }
}
