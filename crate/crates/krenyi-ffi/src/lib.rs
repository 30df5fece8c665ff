//! C ABI over the kernelized Renyi estimators: opaque kernel handles, flat
//! row-major sample buffers, and integer status codes. The header is
//! generated into `include/krenyi.h` at build time.
//!
//! Conventions: every fallible function returns a [`KrnStatus`]; outputs go
//! through pointers that are written only on `Ok`. Sample buffers are dense
//! row-major `m x dim` doubles. A thread-local message for the most recent
//! error is available via [`krn_last_error`].

use krenyi::error::Error;
use krenyi::kernel::{self, KernelSpec};
use krenyi::matrix::SymMatrix;
use libc::{c_char, size_t};
use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    Numeric = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
        e.push(0);
    });
}

fn status_of(err: &Error) -> KrnStatus {
    match err {
        Error::DomainError(_) => KrnStatus::Domain,
        Error::InvalidInput(_)
        | Error::InvalidPartition(_)
        | Error::InsufficientSamples { .. }
        | Error::FormatError { .. }
        | Error::TooLarge { .. } => KrnStatus::InvalidInput,
        _ => KrnStatus::Numeric,
    }
}

fn run<F: FnOnce() -> Result<(), (KrnStatus, String)>>(f: F) -> KrnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KrnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside krenyi");
            KrnStatus::Panic
        }
    }
}

fn err_of(e: Error) -> (KrnStatus, String) {
    (status_of(&e), e.to_string())
}

/// Copies the most recent error message (NUL-terminated) into `buf`.
/// Returns the number of bytes the full message needs, including the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (to query the size).
#[no_mangle]
pub unsafe extern "C" fn krn_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = (len - 1).min(e.len());
            std::ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn krn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque kernel handle.
pub struct KrnKernel {
    inner: KernelSpec,
}

unsafe fn samples_from_raw(
    data: *const f64,
    m: size_t,
    dim: size_t,
) -> Result<Vec<Vec<f64>>, (KrnStatus, String)> {
    if data.is_null() {
        return Err((KrnStatus::NullPointer, "null sample buffer".into()));
    }
    if m == 0 || dim == 0 {
        return Err((KrnStatus::InvalidInput, "empty sample buffer".into()));
    }
    let flat = std::slice::from_raw_parts(data, m * dim);
    Ok(flat.chunks_exact(dim).map(|c| c.to_vec()).collect())
}

unsafe fn write_out(out: *mut f64, v: f64) -> Result<(), (KrnStatus, String)> {
    if out.is_null() {
        return Err((KrnStatus::NullPointer, "null output pointer".into()));
    }
    *out = v;
    Ok(())
}

/// Creates a Gaussian kernel handle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krn_kernel_gaussian(
    width: f64,
    input_dim: size_t,
    out: *mut *mut KrnKernel,
) -> KrnStatus {
    run(|| {
        if out.is_null() {
            return Err((KrnStatus::NullPointer, "null output pointer".into()));
        }
        let spec = KernelSpec::gaussian(width, input_dim).map_err(err_of)?;
        *out = Box::into_raw(Box::new(KrnKernel { inner: spec }));
        Ok(())
    })
}

/// Creates a box kernel handle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krn_kernel_box(
    radius: f64,
    input_dim: size_t,
    out: *mut *mut KrnKernel,
) -> KrnStatus {
    run(|| {
        if out.is_null() {
            return Err((KrnStatus::NullPointer, "null output pointer".into()));
        }
        let spec = KernelSpec::box_kernel(radius, input_dim).map_err(err_of)?;
        *out = Box::into_raw(Box::new(KrnKernel { inner: spec }));
        Ok(())
    })
}

/// Frees a kernel handle. Null is ignored.
///
/// # Safety
/// `kernel` must have come from a `krn_kernel_*` constructor and not have
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn krn_kernel_free(kernel: *mut KrnKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Writes the kernel's log normalizer log C_kappa.
///
/// # Safety
/// `kernel` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_kernel_log_normalizer(
    kernel: *const KrnKernel,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        if kernel.is_null() {
            return Err((KrnStatus::NullPointer, "null kernel handle".into()));
        }
        write_out(out, (*kernel).inner.log_normalizer)
    })
}

/// Kernel width selection: mean of the top `quantile` fraction of pairwise
/// Euclidean distances over `m` row-major samples of length `dim`.
///
/// # Safety
/// `data` must point to `m * dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_select_width(
    data: *const f64,
    m: size_t,
    dim: size_t,
    quantile: f64,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        let samples = samples_from_raw(data, m, dim)?;
        let w = kernel::select_width(&samples, quantile).map_err(err_of)?;
        write_out(out, w)
    })
}

/// Entropy estimate of `m` samples under `kernel`; also writes the
/// 95% concentration radius when `out_radius` is non-null.
///
/// # Safety
/// `data` must point to `m * dim` doubles matching the kernel's input
/// dimension; `kernel` must be a live handle; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_entropy_estimate(
    data: *const f64,
    m: size_t,
    dim: size_t,
    kernel: *const KrnKernel,
    apply_normalizer: bool,
    out_value: *mut f64,
    out_radius: *mut f64,
) -> KrnStatus {
    run(|| {
        if kernel.is_null() {
            return Err((KrnStatus::NullPointer, "null kernel handle".into()));
        }
        let samples = samples_from_raw(data, m, dim)?;
        let est = kernel::entropy_estimate(&samples, &(*kernel).inner, apply_normalizer)
            .map_err(err_of)?;
        if !out_radius.is_null() {
            *out_radius = est.concentration_radius_at_95;
        }
        write_out(out_value, est.value)
    })
}

/// Mutual information between index-aligned samples.
///
/// # Safety
/// `x` must point to `m * dim_x` doubles and `y` to `m * dim_y`; kernels
/// must be live handles of matching dimension; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_mi_estimate(
    x: *const f64,
    y: *const f64,
    m: size_t,
    dim_x: size_t,
    dim_y: size_t,
    kernel_x: *const KrnKernel,
    kernel_y: *const KrnKernel,
    apply_normalizer: bool,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        if kernel_x.is_null() || kernel_y.is_null() {
            return Err((KrnStatus::NullPointer, "null kernel handle".into()));
        }
        let xs = samples_from_raw(x, m, dim_x)?;
        let ys = samples_from_raw(y, m, dim_y)?;
        let v = kernel::mi_estimate(
            &xs,
            &ys,
            &(*kernel_x).inner,
            &(*kernel_y).inner,
            apply_normalizer,
        )
        .map_err(err_of)?;
        write_out(out, v)
    })
}

/// Conditional mutual information I(X;Y|Z) over triple-aligned samples.
///
/// # Safety
/// Buffers must hold `m` rows of the stated dimensions; kernels must be live
/// handles; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn krn_cond_mi_estimate(
    x: *const f64,
    y: *const f64,
    z: *const f64,
    m: size_t,
    dim_x: size_t,
    dim_y: size_t,
    dim_z: size_t,
    kernel_x: *const KrnKernel,
    kernel_y: *const KrnKernel,
    kernel_z: *const KrnKernel,
    apply_normalizer: bool,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        if kernel_x.is_null() || kernel_y.is_null() || kernel_z.is_null() {
            return Err((KrnStatus::NullPointer, "null kernel handle".into()));
        }
        let xs = samples_from_raw(x, m, dim_x)?;
        let ys = samples_from_raw(y, m, dim_y)?;
        let zs = samples_from_raw(z, m, dim_z)?;
        let v = kernel::cond_mi_estimate(
            &xs,
            &ys,
            &zs,
            &(*kernel_x).inner,
            &(*kernel_y).inner,
            &(*kernel_z).inner,
            apply_normalizer,
        )
        .map_err(err_of)?;
        write_out(out, v)
    })
}

/// The finite-sample concentration radius 9 C sqrt(2 log(2/delta)) m^(-1/3).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_concentration_radius(
    m: size_t,
    delta: f64,
    c_kappa: f64,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        let v = kernel::concentration_radius(m, delta, c_kappa).map_err(err_of)?;
        write_out(out, v)
    })
}

/// Closed-form entropy of a zero-mean Gaussian with covariance `cov`
/// (row-major d x d) under a Gaussian kernel of width `sigma_kappa`.
///
/// # Safety
/// `cov` must point to `d * d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_gaussian_closed_form(
    cov: *const f64,
    d: size_t,
    sigma_kappa: f64,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        if cov.is_null() {
            return Err((KrnStatus::NullPointer, "null covariance buffer".into()));
        }
        if d == 0 {
            return Err((KrnStatus::InvalidInput, "empty covariance".into()));
        }
        let flat = std::slice::from_raw_parts(cov, d * d).to_vec();
        let m = SymMatrix::from_row_major(d, flat).map_err(err_of)?;
        let v = kernel::gaussian_closed_form(&m, sigma_kappa).map_err(err_of)?;
        write_out(out, v)
    })
}

/// theta_c(V) = 1/2 log|eta^2/sigma2 V + I| of a row-major d x d PSD matrix.
///
/// # Safety
/// `cov` must point to `d * d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_theta_c(
    cov: *const f64,
    d: size_t,
    eta: f64,
    sigma2: f64,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        if cov.is_null() {
            return Err((KrnStatus::NullPointer, "null covariance buffer".into()));
        }
        if d == 0 {
            return Err((KrnStatus::InvalidInput, "empty covariance".into()));
        }
        let flat = std::slice::from_raw_parts(cov, d * d).to_vec();
        let m = SymMatrix::from_row_major(d, flat).map_err(err_of)?;
        let v = krenyi::bounds::theta_c(&m, eta, sigma2).map_err(err_of)?;
        write_out(out, v)
    })
}

/// theta_v(V) = d/2 log(eta^2 V / (d sigma2) + 1).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn krn_theta_v(
    scalar_var: f64,
    eta: f64,
    sigma2: f64,
    d: size_t,
    out: *mut f64,
) -> KrnStatus {
    run(|| {
        let v = krenyi::bounds::theta_v(scalar_var, eta, sigma2, d).map_err(err_of)?;
        write_out(out, v)
    })
}

/// Generalization bounds from an information quantity: writes the mean
/// bound and the second-moment bound.
///
/// # Safety
/// `out_mean` and `out_second` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn krn_thm1_bounds(
    info: f64,
    r: f64,
    n: size_t,
    out_mean: *mut f64,
    out_second: *mut f64,
) -> KrnStatus {
    run(|| {
        if out_mean.is_null() || out_second.is_null() {
            return Err((KrnStatus::NullPointer, "null output pointer".into()));
        }
        let (mean, second) = krenyi::bounds::thm1_bounds(info, r, n);
        *out_mean = mean;
        *out_second = second;
        Ok(())
    })
}
