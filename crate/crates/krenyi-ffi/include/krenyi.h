#ifndef KRENYI_H
#define KRENYI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum KrnStatus {
  Ok = 0,
  NullPointer = 1,
  InvalidInput = 2,
  Domain = 3,
  Numeric = 4,
  Panic = 5,
} KrnStatus;

/**
 * Opaque kernel handle.
 */
typedef struct KrnKernel KrnKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message (NUL-terminated) into `buf`.
 * Returns the number of bytes the full message needs, including the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (to query the size).
 */
size_t krn_last_error(char *buf, size_t len);

/**
 * Static version string of the library.
 */
const char *krn_version(void);

/**
 * Creates a Gaussian kernel handle.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KrnStatus krn_kernel_gaussian(double width, size_t input_dim, struct KrnKernel **out);

/**
 * Creates a box kernel handle.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KrnStatus krn_kernel_box(double radius, size_t input_dim, struct KrnKernel **out);

/**
 * Frees a kernel handle. Null is ignored.
 *
 * # Safety
 * `kernel` must have come from a `krn_kernel_*` constructor and not have
 * been freed already.
 */
void krn_kernel_free(struct KrnKernel *kernel);

/**
 * Writes the kernel's log normalizer log C_kappa.
 *
 * # Safety
 * `kernel` must be a live handle; `out` must be valid.
 */
enum KrnStatus krn_kernel_log_normalizer(const struct KrnKernel *kernel, double *out);

/**
 * Kernel width selection: mean of the top `quantile` fraction of pairwise
 * Euclidean distances over `m` row-major samples of length `dim`.
 *
 * # Safety
 * `data` must point to `m * dim` doubles; `out` must be valid.
 */
enum KrnStatus krn_select_width(const double *data,
                                size_t m,
                                size_t dim,
                                double quantile,
                                double *out);

/**
 * Entropy estimate of `m` samples under `kernel`; also writes the
 * 95% concentration radius when `out_radius` is non-null.
 *
 * # Safety
 * `data` must point to `m * dim` doubles matching the kernel's input
 * dimension; `kernel` must be a live handle; `out_value` must be valid.
 */
enum KrnStatus krn_entropy_estimate(const double *data,
                                    size_t m,
                                    size_t dim,
                                    const struct KrnKernel *kernel,
                                    bool apply_normalizer,
                                    double *out_value,
                                    double *out_radius);

/**
 * Mutual information between index-aligned samples.
 *
 * # Safety
 * `x` must point to `m * dim_x` doubles and `y` to `m * dim_y`; kernels
 * must be live handles of matching dimension; `out` must be valid.
 */
enum KrnStatus krn_mi_estimate(const double *x,
                               const double *y,
                               size_t m,
                               size_t dim_x,
                               size_t dim_y,
                               const struct KrnKernel *kernel_x,
                               const struct KrnKernel *kernel_y,
                               bool apply_normalizer,
                               double *out);

/**
 * Conditional mutual information I(X;Y|Z) over triple-aligned samples.
 *
 * # Safety
 * Buffers must hold `m` rows of the stated dimensions; kernels must be live
 * handles; `out` must be valid.
 */
enum KrnStatus krn_cond_mi_estimate(const double *x,
                                    const double *y,
                                    const double *z,
                                    size_t m,
                                    size_t dim_x,
                                    size_t dim_y,
                                    size_t dim_z,
                                    const struct KrnKernel *kernel_x,
                                    const struct KrnKernel *kernel_y,
                                    const struct KrnKernel *kernel_z,
                                    bool apply_normalizer,
                                    double *out);

/**
 * The finite-sample concentration radius 9 C sqrt(2 log(2/delta)) m^(-1/3).
 *
 * # Safety
 * `out` must be valid.
 */
enum KrnStatus krn_concentration_radius(size_t m, double delta, double c_kappa, double *out);

/**
 * Closed-form entropy of a zero-mean Gaussian with covariance `cov`
 * (row-major d x d) under a Gaussian kernel of width `sigma_kappa`.
 *
 * # Safety
 * `cov` must point to `d * d` doubles; `out` must be valid.
 */
enum KrnStatus krn_gaussian_closed_form(const double *cov,
                                        size_t d,
                                        double sigma_kappa,
                                        double *out);

/**
 * theta_c(V) = 1/2 log|eta^2/sigma2 V + I| of a row-major d x d PSD matrix.
 *
 * # Safety
 * `cov` must point to `d * d` doubles; `out` must be valid.
 */
enum KrnStatus krn_theta_c(const double *cov, size_t d, double eta, double sigma2, double *out);

/**
 * theta_v(V) = d/2 log(eta^2 V / (d sigma2) + 1).
 *
 * # Safety
 * `out` must be valid.
 */
enum KrnStatus krn_theta_v(double scalar_var, double eta, double sigma2, size_t d, double *out);

/**
 * Generalization bounds from an information quantity: writes the mean
 * bound and the second-moment bound.
 *
 * # Safety
 * `out_mean` and `out_second` must be valid pointers.
 */
enum KrnStatus krn_thm1_bounds(double info,
                               double r,
                               size_t n,
                               double *out_mean,
                               double *out_second);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* KRENYI_H */
