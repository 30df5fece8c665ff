//! Dense symmetric linear algebra: eigendecomposition, spectral functions,
//! submatrix extraction and sample covariance.
//!
//! Everything here is written for the small-to-medium matrices the estimators
//! need (Gram matrices of a few hundred samples, covariance blocks up to a few
//! thousand). Eigendecomposition uses cyclic Jacobi rotations, which are
//! deterministic and accurate for these sizes; when only eigenvalues are
//! needed and the matrix is large, a Householder tridiagonalization followed
//! by implicit QL is used instead.

use crate::error::{Error, Result};

/// Dense symmetric matrix. Only the upper triangle is authoritative;
/// writes mirror onto the lower triangle so both halves always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>, // row-major, dim * dim
}

/// Matrices at or below this order go through Jacobi even when only
/// eigenvalues are requested.
const JACOBI_MAX_DIM: usize = 64;

/// Convergence threshold factor for Jacobi: off-diagonal Frobenius norm
/// relative to the input Frobenius norm.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds from row-major entries; the upper triangle is authoritative and
    /// is mirrored onto the lower one.
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let mut m = SymMatrix { dim, data: entries };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = m.data[i * dim + j];
                m.data[j * dim + i] = v;
            }
        }
        Ok(m)
    }

    /// Builds by evaluating `f(i, j)` on the upper triangle (i <= j).
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entry-wise (Hadamard) product with another matrix of the same order.
    pub fn hadamard(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(SymMatrix {
            dim: self.dim,
            data,
        })
    }

    /// Scales every entry by `s`.
    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Result of a symmetric eigendecomposition, eigenvalues sorted descending.
/// Eigenvector `k` occupies `eigenvectors[k * dim .. (k + 1) * dim]`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigenvalues: Vec<f64>,
    eigenvectors: Vec<f64>,
    dim: usize,
}

impl EigenDecomp {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Frobenius norm of Q diag(lambda) Q^T - S.
    pub fn reconstruction_error(&self, s: &SymMatrix) -> f64 {
        let n = self.dim;
        let mut err = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += self.eigenvalues[k] * self.eigenvectors[k * n + i] * self.eigenvectors[k * n + j];
                }
                let d = v - s.get(i, j);
                err += d * d;
            }
        }
        err.sqrt()
    }

    /// Frobenius norm of Q^T Q - I.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim;
        let mut err = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                for i in 0..n {
                    v += self.eigenvectors[a * n + i] * self.eigenvectors[b * n + i];
                }
                if a == b {
                    v -= 1.0;
                }
                err += v * v;
            }
        }
        err.sqrt()
    }
}

/// Full eigendecomposition by cyclic Jacobi rotations. Deterministic for
/// identical input bits.
pub fn sym_eigen(s: &SymMatrix) -> Result<EigenDecomp> {
    if !s.is_finite() {
        return Err(Error::InvalidMatrix);
    }
    let (mut vals, vecs) = jacobi(s, true)?;
    let vecs = vecs.expect("jacobi with vectors");
    let mut order: Vec<usize> = (0..s.dim).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).expect("finite eigenvalues"));
    let n = s.dim;
    let mut sorted_vecs = vec![0.0; n * n];
    let sorted_vals: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
    for (new_k, &old_k) in order.iter().enumerate() {
        for i in 0..n {
            // jacobi returns Q row-major with columns as eigenvectors
            sorted_vecs[new_k * n + i] = vecs[i * n + old_k];
        }
    }
    vals = sorted_vals;
    Ok(EigenDecomp {
        eigenvalues: vals,
        eigenvectors: sorted_vecs,
        dim: n,
    })
}

/// Eigenvalues only, sorted descending. Dispatches to Jacobi for small
/// matrices and to Householder tridiagonalization + implicit QL above
/// `JACOBI_MAX_DIM`, where Jacobi's O(n^3) per sweep becomes prohibitive.
pub fn sym_eigenvalues(s: &SymMatrix) -> Result<Vec<f64>> {
    if !s.is_finite() {
        return Err(Error::InvalidMatrix);
    }
    let mut vals = if s.dim <= JACOBI_MAX_DIM {
        jacobi(s, false)?.0
    } else {
        tridiag_eigenvalues(s)?
    };
    vals.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    Ok(vals)
}

/// Cyclic Jacobi. Returns unsorted eigenvalues and, when requested, the
/// accumulated rotation matrix (row-major; columns are eigenvectors).
fn jacobi(s: &SymMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let n = s.dim;
    let mut a = s.data.clone();
    let mut q = if want_vectors {
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        Some(q)
    } else {
        None
    };
    if n == 1 {
        return Ok((vec![a[0]], q));
    }
    let norm = s.frobenius_norm();
    let tol = JACOBI_TOL * norm;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= tol {
            let vals = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((vals, q));
        }
        for p in 0..(n - 1) {
            for r in (p + 1)..n {
                let apr = a[p * n + r];
                if apr == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let arr = a[r * n + r];
                let diff = arr - app;
                let t = if diff.abs() < 1e-300 * apr.abs() {
                    1.0_f64.copysign(apr)
                } else {
                    let theta = 0.5 * diff / apr;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);
                let h = t * apr;
                a[p * n + p] = app - h;
                a[r * n + r] = arr + h;
                a[p * n + r] = 0.0;
                a[r * n + p] = 0.0;
                for j in 0..n {
                    if j == p || j == r {
                        continue;
                    }
                    let ajp = a[j * n + p];
                    let ajr = a[j * n + r];
                    let njp = ajp - sn * (ajr + ajp * tau);
                    let njr = ajr + sn * (ajp - ajr * tau);
                    a[j * n + p] = njp;
                    a[p * n + j] = njp;
                    a[j * n + r] = njr;
                    a[r * n + j] = njr;
                }
                if let Some(q) = q.as_mut() {
                    for j in 0..n {
                        let qjp = q[j * n + p];
                        let qjr = q[j * n + r];
                        q[j * n + p] = qjp - sn * (qjr + qjp * tau);
                        q[j * n + r] = qjr + sn * (qjp - qjr * tau);
                    }
                }
            }
        }
    }
    // Check whether the final sweep already reached the target.
    let mut off = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            off += 2.0 * a[i * n + j] * a[i * n + j];
        }
    }
    if off.sqrt() <= tol {
        let vals = (0..n).map(|i| a[i * n + i]).collect();
        return Ok((vals, q));
    }
    Err(Error::NoConvergence(JACOBI_MAX_SWEEPS))
}

/// Householder reduction to tridiagonal form (no eigenvector accumulation)
/// followed by implicit-shift QL. Eigenvalues only, unsorted.
fn tridiag_eigenvalues(s: &SymMatrix) -> Result<Vec<f64>> {
    let n = s.dim;
    let mut a = s.data.clone();
    let mut diag = vec![0.0; n];
    let mut sub = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut w = vec![0.0; n];

    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1; // length of the column tail below the diagonal
        // Householder vector for column k, rows k+1..n
        let mut alpha = 0.0;
        for i in 0..m {
            let x = a[(k + 1 + i) * n + k];
            v[i] = x;
            alpha += x * x;
        }
        let x0 = v[0];
        let norm = alpha.sqrt();
        if norm == 0.0 {
            sub[k] = 0.0;
            continue;
        }
        let beta_sign = if x0 >= 0.0 { norm } else { -norm };
        v[0] = x0 + beta_sign;
        let vnorm2 = alpha - x0 * x0 + v[0] * v[0];
        if vnorm2 == 0.0 {
            sub[k] = -beta_sign;
            continue;
        }
        let beta = 2.0 / vnorm2;
        sub[k] = -beta_sign;

        // p = beta * A22 * v over the trailing block, using the lower triangle
        for i in 0..m {
            p[i] = 0.0;
        }
        for i in 0..m {
            let row = (k + 1 + i) * n + (k + 1);
            let vi = v[i];
            let mut acc = 0.0;
            let (row_slice, v_slice) = (&a[row..row + i], &v[..i]);
            for (aij, (pj, vj)) in row_slice
                .iter()
                .zip(p[..i].iter_mut().zip(v_slice.iter()))
            {
                acc += aij * vj;
                *pj += aij * vi;
            }
            p[i] += acc + a[row + i] * vi;
        }
        for pi in p[..m].iter_mut() {
            *pi *= beta;
        }
        // w = p - (beta/2) (p.v) v
        let pv: f64 = p[..m].iter().zip(v[..m].iter()).map(|(a, b)| a * b).sum();
        let gamma = 0.5 * beta * pv;
        for i in 0..m {
            w[i] = p[i] - gamma * v[i];
        }
        // A22 -= v w^T + w v^T (lower triangle only)
        for i in 0..m {
            let row = (k + 1 + i) * n + (k + 1);
            let vi = v[i];
            let wi = w[i];
            let row_slice = &mut a[row..=row + i];
            for ((aij, vj), wj) in row_slice.iter_mut().zip(v[..=i].iter()).zip(w[..=i].iter()) {
                *aij -= vi * wj + wi * vj;
            }
        }
    }
    if n >= 2 {
        sub[n - 2] = a[(n - 1) * n + (n - 2)];
    }
    for i in 0..n {
        diag[i] = a[i * n + i];
    }
    sub[n - 1] = 0.0;
    ql_implicit(&mut diag, &mut sub)?;
    Ok(diag)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix.
/// `diag` holds the diagonal, `sub[i]` the (i, i+1) entry, `sub[n-1]` unused.
fn ql_implicit(diag: &mut [f64], sub: &mut [f64]) -> Result<()> {
    let n = diag.len();
    const MAX_ITER: usize = 64;
    // running absolute deflation floor; without it, clusters of eigenvalues
    // at round-off scale (rank-deficient inputs) never deflate
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(f64::EPSILON * (diag[l].abs() + sub[l].abs()));
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if sub[m].abs() <= (f64::EPSILON * dd).max(tst1) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_ITER {
                return Err(Error::NoConvergence(MAX_ITER));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * sub[l]);
            let mut r = g.hypot(1.0);
            let denom = g + r.copysign(if g >= 0.0 { 1.0 } else { -1.0 });
            g = diag[m] - diag[l] + sub[l] / denom;
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * sub[i];
                let b = c * sub[i];
                r = f.hypot(g);
                sub[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    sub[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            sub[l] = g;
            sub[m] = 0.0;
        }
    }
    Ok(())
}

/// Relative floor below which eigenvalues are treated as exact zeros from
/// round-off. Keeps rank-deficient spectra (identical samples, constant
/// variables) from leaking O(eps * log eps) into entropies.
const EIGEN_ZERO_FLOOR: f64 = 1e-12;
/// Eigenvalues below -1e-6 * lambda_max are a genuine PSD violation.
const PSD_REL_TOL: f64 = 1e-6;

/// Clamps a PSD spectrum: zeros out round-off negatives and tiny values,
/// errors on genuine negative eigenvalues.
fn clamp_psd_spectrum(vals: &mut [f64]) -> Result<()> {
    let lam_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = if lam_max > 0.0 { lam_max } else { 0.0 };
    for v in vals.iter_mut() {
        if *v < -PSD_REL_TOL * floor.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { eigenvalue: *v });
        }
        if *v < EIGEN_ZERO_FLOOR * floor {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Von Neumann entropy -tr(K log K) of a trace-one PSD matrix, natural log,
/// with the 0 log 0 := 0 convention. Eigenvalues are clamped to [0, 1] and
/// renormalized to sum to one so that rank-one spectra give exactly zero.
pub fn vn_entropy(k: &SymMatrix) -> Result<f64> {
    let trace = k.trace();
    if !(trace.is_finite() && (trace - 1.0).abs() <= 1e-6) {
        return Err(Error::NotTraceNormalized { trace });
    }
    let mut vals = sym_eigenvalues(k)?;
    clamp_psd_spectrum(&mut vals)?;
    for v in vals.iter_mut() {
        if *v > 1.0 {
            *v = 1.0;
        }
    }
    let total: f64 = vals.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut h = 0.0;
    for &v in &vals {
        if v > 0.0 {
            let lam = v / total;
            h -= lam * lam.ln();
        }
    }
    // -x ln x dips infinitesimally below zero when lam == 1 exactly
    Ok(h.max(0.0))
}

/// 0.5 * sum_i log(1 + c * lambda_i(A)) for PSD `A` and shift `c >= 0`.
/// Equals 0.5 * log det(cA + I).
pub fn logdet_shifted(a: &SymMatrix, c: f64) -> Result<f64> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::DomainError(format!("shift must be >= 0, got {c}")));
    }
    let mut vals = sym_eigenvalues(a)?;
    clamp_psd_spectrum(&mut vals)?;
    let mut acc = 0.0;
    for &v in &vals {
        acc += (c * v).ln_1p();
    }
    Ok(0.5 * acc)
}

/// Restriction of `a` to the rows and columns in `idx` (strictly increasing).
pub fn principal_submatrix(a: &SymMatrix, idx: &[usize]) -> Result<SymMatrix> {
    if idx.is_empty() {
        return Err(Error::InvalidPartition("empty index set".into()));
    }
    for w in idx.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidPartition(format!(
                "indices not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    if *idx.last().expect("non-empty") >= a.dim() {
        return Err(Error::InvalidPartition(format!(
            "index {} out of range for dim {}",
            idx.last().expect("non-empty"),
            a.dim()
        )));
    }
    let k = idx.len();
    let mut out = SymMatrix::zeros(k);
    for (oi, &i) in idx.iter().enumerate() {
        for (oj, &j) in idx.iter().enumerate().skip(oi) {
            let v = a.get(i, j);
            out.set(oi, oj, v);
        }
    }
    Ok(out)
}

/// Unbiased sample covariance (divisor b-1) of equally sized vectors.
/// With `scale_by_batch` the result is divided additionally by b, giving the
/// covariance of the mean of b i.i.d. draws.
pub fn sample_covariance(vectors: &[Vec<f64>], scale_by_batch: bool) -> Result<SymMatrix> {
    let b = vectors.len();
    if b < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: b });
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidInput("vectors of unequal dimension".into()));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= b as f64;
    }
    let mut cov = SymMatrix::zeros(d);
    let mut delta = vec![0.0; d];
    let mut denom = (b - 1) as f64;
    if scale_by_batch {
        denom *= b as f64;
    }
    for v in vectors {
        for i in 0..d {
            delta[i] = v[i] - mean[i];
        }
        for i in 0..d {
            let di = delta[i];
            let row = i * d;
            for j in i..d {
                cov.data[row + j] += di * delta[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.data[i * d + j] / denom;
            cov.set(i, j, v);
        }
    }
    Ok(cov)
}
