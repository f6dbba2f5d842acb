#ifndef MSCASTLE_H
#define MSCASTLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MscStatus {
  MSC_STATUS_OK = 0,
  MSC_STATUS_NULL_POINTER = 1,
  MSC_STATUS_INVALID_ARGUMENT = 2,
  MSC_STATUS_INVALID_DATA = 3,
  MSC_STATUS_NUMERIC_FAILURE = 4,
  MSC_STATUS_BUFFER_TOO_SMALL = 5,
  MSC_STATUS_PANIC = 6,
} MscStatus;

typedef enum MscWavelet {
  MSC_WAVELET_HAAR = 0,
  MSC_WAVELET_DAUBECHIES4 = 1,
  MSC_WAVELET_SYMLET8 = 2,
} MscWavelet;

/**
 * Opaque result of [`msc_fit`].
 */
typedef struct MscFit MscFit;

/**
 * Solver settings. Fill with [`msc_solver_config_default`] and override fields.
 */
typedef struct MscSolverConfig {
  double lambda;
  double rho;
  double gamma0;
  double gamma_max;
  double ratio_r;
  double tol_h;
  double tol_primal;
  size_t max_iter;
  double inner_tol;
  size_t inner_max_iter;
  /**
   * Nonzero divides the squared error by the number of usable rows.
   */
  int32_t mean_loss;
  size_t max_backtracks;
  /**
   * Nonzero rebalances `rho` from the residuals.
   */
  int32_t adaptive_rho;
} MscSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *msc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *msc_version(void);

/**
 * Dagness `tr(exp(W o W)) - n` of the row-major `n x n` matrix `w`. When `grad`
 * is not NULL it receives the `n x n` gradient.
 *
 * # Safety
 * `w` must hold `n * n` doubles, `h` must be writable and `grad`, if not NULL,
 * must have room for `n * n` doubles.
 */
enum MscStatus msc_dagness(const double *w, size_t n, double *h, double *grad);

/**
 * Stationary wavelet decomposition of a row-major `t x n` panel into `levels`
 * detail levels. `details` receives `t x (levels * n)` values, scale-major
 * columns (all series at scale 1, then scale 2, ...); `smooth` receives `t x n`.
 *
 * # Safety
 * `data` must hold `t * n` doubles; `details` and `smooth` must have room for
 * `t * levels * n` and `t * n` doubles.
 */
enum MscStatus msc_swt_decompose(const double *data,
                                 size_t t,
                                 size_t n,
                                 size_t levels,
                                 enum MscWavelet wavelet,
                                 double *details,
                                 double *smooth);

/**
 * Write the default solver settings into `out`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MscStatus msc_solver_config_default(struct MscSolverConfig *out);

/**
 * Fit a row-major `t x n` panel. With `levels == 0` the raw series are fitted
 * on a single scale; otherwise they are decomposed into `levels` detail levels
 * with `wavelet` first. On success `*out` owns a new handle. A run that stops at
 * the iteration limit still succeeds; check [`msc_fit_converged`].
 *
 * # Safety
 * `data` must hold `t * n` doubles; `config` and `out` must be valid pointers.
 */
enum MscStatus msc_fit(const double *data,
                       size_t t,
                       size_t n,
                       size_t levels,
                       enum MscWavelet wavelet,
                       size_t lags,
                       const struct MscSolverConfig *config,
                       struct MscFit **out);

/**
 * Release a handle from [`msc_fit`]. NULL is ignored.
 *
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void msc_fit_free(struct MscFit *fit);

/**
 * 1 when the run met both stopping tolerances, 0 otherwise or for NULL.
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
int32_t msc_fit_converged(const struct MscFit *fit);

/**
 * Outer iterations performed; 0 for NULL.
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
size_t msc_fit_iterations(const struct MscFit *fit);

/**
 * Stack dimensions of the fit.
 *
 * # Safety
 * `fit` must be a live handle; the output pointers must be writable.
 */
enum MscStatus msc_fit_shape(const struct MscFit *fit,
                             size_t *lags,
                             size_t *scales,
                             size_t *series);

/**
 * Sparse estimate of the `(scale, lag)` block, `series x series` row-major with
 * parents on rows. `scale` starts at 1. `len` is the capacity of `out`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must have room for `len` doubles.
 */
enum MscStatus msc_fit_block(const struct MscFit *fit,
                             size_t scale,
                             size_t lag,
                             double *out,
                             size_t len);

/**
 * Loss terms and lag-0 dagness of the sparse estimate. Any output may be NULL.
 *
 * # Safety
 * `fit` must be a live handle; non-NULL outputs must be writable.
 */
enum MscStatus msc_fit_diagnostics(const struct MscFit *fit,
                                   double *fit_loss,
                                   double *reg_loss,
                                   double *acyclicity,
                                   double *primal_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSCASTLE_H */
