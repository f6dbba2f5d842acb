//! C interface to the multiscale causal structure learner.
//!
//! Matrices cross the boundary as row-major `double` buffers. Every fallible call
//! returns an [`MscStatus`]; on failure [`msc_last_error_message`] describes the
//! most recent error on the calling thread. Fits are returned as opaque
//! [`MscFit`] handles released with [`msc_fit_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mscastle::solver::LossScale;
use mscastle::{dagness, Error, SolverConfig, SolverState, TimeSeriesPanel, WaveletFamily};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    NumericFailure = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MscWavelet {
    Haar = 0,
    Daubechies4 = 1,
    Symlet8 = 2,
}

impl From<MscWavelet> for WaveletFamily {
    fn from(w: MscWavelet) -> Self {
        match w {
            MscWavelet::Haar => WaveletFamily::Haar,
            MscWavelet::Daubechies4 => WaveletFamily::Daubechies4,
            MscWavelet::Symlet8 => WaveletFamily::Symlet8,
        }
    }
}

/// Solver settings. Fill with [`msc_solver_config_default`] and override fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MscSolverConfig {
    pub lambda: f64,
    pub rho: f64,
    pub gamma0: f64,
    pub gamma_max: f64,
    pub ratio_r: f64,
    pub tol_h: f64,
    pub tol_primal: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Nonzero divides the squared error by the number of usable rows.
    pub mean_loss: i32,
    pub max_backtracks: usize,
    /// Nonzero rebalances `rho` from the residuals.
    pub adaptive_rho: i32,
}

impl From<&SolverConfig> for MscSolverConfig {
    fn from(c: &SolverConfig) -> Self {
        Self {
            lambda: c.lambda,
            rho: c.rho,
            gamma0: c.gamma0,
            gamma_max: c.gamma_max,
            ratio_r: c.ratio_r,
            tol_h: c.tol_h,
            tol_primal: c.tol_primal,
            max_iter: c.max_iter,
            inner_tol: c.inner_tol,
            inner_max_iter: c.inner_max_iter,
            mean_loss: i32::from(c.loss_scale == LossScale::Mean),
            max_backtracks: c.max_backtracks,
            adaptive_rho: i32::from(c.adaptive_rho),
        }
    }
}

impl From<&MscSolverConfig> for SolverConfig {
    fn from(c: &MscSolverConfig) -> Self {
        Self {
            lambda: c.lambda,
            rho: c.rho,
            gamma0: c.gamma0,
            gamma_max: c.gamma_max,
            ratio_r: c.ratio_r,
            tol_h: c.tol_h,
            tol_primal: c.tol_primal,
            max_iter: c.max_iter,
            inner_tol: c.inner_tol,
            inner_max_iter: c.inner_max_iter,
            loss_scale: if c.mean_loss != 0 {
                LossScale::Mean
            } else {
                LossScale::Sum
            },
            max_backtracks: c.max_backtracks,
            adaptive_rho: c.adaptive_rho != 0,
        }
    }
}

/// Opaque result of [`msc_fit`].
pub struct MscFit {
    state: SolverState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MscStatus, msg: impl Into<String>) -> MscStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> MscStatus {
    match err {
        Error::InvalidArgument(_) | Error::RangeNotFound { .. } => MscStatus::InvalidArgument,
        Error::NumericFailure { .. } | Error::SweepFailure(_) => MscStatus::NumericFailure,
        _ => MscStatus::InvalidData,
    }
}

/// Run `f`, converting library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MscStatus>) -> MscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MscStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MscStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lib_err(err: Error) -> MscStatus {
    fail(status_of(&err), err.to_string())
}

fn not_null<T>(p: *const T, name: &str) -> Result<(), MscStatus> {
    if p.is_null() {
        Err(fail(MscStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Read a row-major `rows x cols` buffer.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn read_matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>, MscStatus> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(MscStatus::InvalidArgument, "matrix size overflows"))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(DMatrix::from_row_slice(rows, cols, slice))
}

/// Write `m` row-major into `out`.
///
/// # Safety
/// `out` must point to `m.len()` writable doubles.
unsafe fn write_matrix(m: &DMatrix<f64>, out: *mut f64) {
    let out = std::slice::from_raw_parts_mut(out, m.len());
    for (r, row) in m.row_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            out[r * m.ncols() + c] = *v;
        }
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn msc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Dagness `tr(exp(W o W)) - n` of the row-major `n x n` matrix `w`. When `grad`
/// is not NULL it receives the `n x n` gradient.
///
/// # Safety
/// `w` must hold `n * n` doubles, `h` must be writable and `grad`, if not NULL,
/// must have room for `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn msc_dagness(
    w: *const f64,
    n: usize,
    h: *mut f64,
    grad: *mut f64,
) -> MscStatus {
    guard(|| {
        not_null(w, "w")?;
        not_null(h, "h")?;
        let m = read_matrix(w, n, n)?;
        let eval = dagness::evaluate(&m).map_err(lib_err)?;
        *h = eval.value;
        if !grad.is_null() {
            write_matrix(&eval.gradient, grad);
        }
        Ok(())
    })
}

/// Stationary wavelet decomposition of a row-major `t x n` panel into `levels`
/// detail levels. `details` receives `t x (levels * n)` values, scale-major
/// columns (all series at scale 1, then scale 2, ...); `smooth` receives `t x n`.
///
/// # Safety
/// `data` must hold `t * n` doubles; `details` and `smooth` must have room for
/// `t * levels * n` and `t * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn msc_swt_decompose(
    data: *const f64,
    t: usize,
    n: usize,
    levels: usize,
    wavelet: MscWavelet,
    details: *mut f64,
    smooth: *mut f64,
) -> MscStatus {
    guard(|| {
        not_null(data, "data")?;
        not_null(details, "details")?;
        not_null(smooth, "smooth")?;
        if n == 0 {
            return Err(fail(MscStatus::InvalidArgument, "panel has no series"));
        }
        let panel = TimeSeriesPanel::from_matrix(read_matrix(data, t, n)?);
        let filter = mscastle::filter_bank(wavelet.into());
        let aug = mscastle::swt_decompose(&panel, levels, &filter).map_err(lib_err)?;
        write_matrix(&aug.details, details);
        write_matrix(&aug.smooth, smooth);
        Ok(())
    })
}

/// Write the default solver settings into `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_solver_config_default(out: *mut MscSolverConfig) -> MscStatus {
    guard(|| {
        not_null(out, "out")?;
        *out = MscSolverConfig::from(&SolverConfig::default());
        Ok(())
    })
}

/// Fit a row-major `t x n` panel. With `levels == 0` the raw series are fitted
/// on a single scale; otherwise they are decomposed into `levels` detail levels
/// with `wavelet` first. On success `*out` owns a new handle. A run that stops at
/// the iteration limit still succeeds; check [`msc_fit_converged`].
///
/// # Safety
/// `data` must hold `t * n` doubles; `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn msc_fit(
    data: *const f64,
    t: usize,
    n: usize,
    levels: usize,
    wavelet: MscWavelet,
    lags: usize,
    config: *const MscSolverConfig,
    out: *mut *mut MscFit,
) -> MscStatus {
    guard(|| {
        not_null(data, "data")?;
        not_null(config, "config")?;
        not_null(out, "out")?;
        *out = ptr::null_mut();
        if n == 0 {
            return Err(fail(MscStatus::InvalidArgument, "panel has no series"));
        }
        let panel = TimeSeriesPanel::from_matrix(read_matrix(data, t, n)?);
        let cfg = SolverConfig::from(&*config);
        let fit = if levels == 0 {
            mscastle::fit_single_scale(&panel, lags, &cfg)
        } else {
            let filter = mscastle::filter_bank(wavelet.into());
            mscastle::fit_multiscale(&panel, levels, &filter, lags, &cfg)
        }
        .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MscFit { state: fit.state }));
        Ok(())
    })
}

/// Release a handle from [`msc_fit`]. NULL is ignored.
///
/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_free(fit: *mut MscFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// 1 when the run met both stopping tolerances, 0 otherwise or for NULL.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_converged(fit: *const MscFit) -> i32 {
    fit.as_ref().map_or(0, |f| i32::from(f.state.converged))
}

/// Outer iterations performed; 0 for NULL.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_iterations(fit: *const MscFit) -> usize {
    fit.as_ref().map_or(0, |f| f.state.iterations)
}

/// Stack dimensions of the fit.
///
/// # Safety
/// `fit` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_shape(
    fit: *const MscFit,
    lags: *mut usize,
    scales: *mut usize,
    series: *mut usize,
) -> MscStatus {
    guard(|| {
        not_null(fit, "fit")?;
        not_null(lags, "lags")?;
        not_null(scales, "scales")?;
        not_null(series, "series")?;
        let layout = (*fit).state.z.layout;
        *lags = layout.lags;
        *scales = layout.scales;
        *series = layout.series;
        Ok(())
    })
}

/// Sparse estimate of the `(scale, lag)` block, `series x series` row-major with
/// parents on rows. `scale` starts at 1. `len` is the capacity of `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_block(
    fit: *const MscFit,
    scale: usize,
    lag: usize,
    out: *mut f64,
    len: usize,
) -> MscStatus {
    guard(|| {
        not_null(fit, "fit")?;
        not_null(out, "out")?;
        let z = &(*fit).state.z;
        let layout = z.layout;
        if scale == 0 || scale > layout.scales || lag > layout.lags {
            return Err(fail(
                MscStatus::InvalidArgument,
                format!(
                    "block (scale {scale}, lag {lag}) outside 1..={} x 0..={}",
                    layout.scales, layout.lags
                ),
            ));
        }
        let need = layout.series * layout.series;
        if len < need {
            return Err(fail(
                MscStatus::BufferTooSmall,
                format!("block needs {need} doubles, buffer holds {len}"),
            ));
        }
        write_matrix(&z.block(scale, lag), out);
        Ok(())
    })
}

/// Loss terms and lag-0 dagness of the sparse estimate. Any output may be NULL.
///
/// # Safety
/// `fit` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn msc_fit_diagnostics(
    fit: *const MscFit,
    fit_loss: *mut f64,
    reg_loss: *mut f64,
    acyclicity: *mut f64,
    primal_residual: *mut f64,
) -> MscStatus {
    guard(|| {
        not_null(fit, "fit")?;
        let s = &(*fit).state;
        for (p, v) in [
            (fit_loss, s.fit_loss),
            (reg_loss, s.reg_loss),
            (acyclicity, s.h_z()),
            (primal_residual, s.primal_residual()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}
