// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI for patchrex.
//!
//! Models live behind an opaque [`PrxModel`] handle. Every function returns a
//! [`PrxStatus`]; on failure a message is available from [`prx_last_error`]
//! on the same thread. Panics never cross the boundary.
//!
//! Arrays are caller-owned. Forecasts are written row-major as
//! `horizon × n_quantiles` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use patchrex::checkpoint::{load_weights, save_weights};
use patchrex::error::Error;
use patchrex::eval::{mase, seasonal_naive, wql};
use patchrex::model::{forecast, ModelConfig, ModelParams};
use patchrex::rng;
use patchrex::TimeSeries;

pub const PRX_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// A metric denominator vanished.
    UndefinedMetric = 4,
    NoObservedValues = 5,
    Checkpoint = 6,
    Io = 7,
    Numerical = 8,
    /// The output buffer is smaller than required.
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

/// Opaque model handle.
pub struct PrxModel {
    params: ModelParams,
}

/// Architecture summary of a model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrxModelConfig {
    pub m_in: u32,
    pub m_out: u32,
    pub d: u32,
    pub d_ff: u32,
    pub n_heads: u32,
    pub n_blocks: u32,
    pub n_quantiles: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PrxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NoObservedValues => PrxStatus::NoObservedValues,
            Error::InvalidPatchSize(_) | Error::InvalidArgument(_) | Error::Config(_) => PrxStatus::InvalidArgument,
            Error::DimensionMismatch(_) => PrxStatus::DimensionMismatch,
            Error::UndefinedMetric(_) => PrxStatus::UndefinedMetric,
            Error::Checkpoint(_) => PrxStatus::Checkpoint,
            Error::Io(_) | Error::Data(_) | Error::Json(_) | Error::Csv(_) => PrxStatus::Io,
            Error::NumericalAbort { .. } | Error::Cholesky => PrxStatus::Numerical,
            Error::MissingCache(_) => PrxStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: PrxStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PrxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PrxStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PrxStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(fail(PrxStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(fail(PrxStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PrxStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn model_ref<'a>(m: *const PrxModel) -> Result<&'a PrxModel, Failure> {
    m.as_ref().ok_or_else(|| fail(PrxStatus::NullPointer, "model handle is null"))
}

fn store_handle(out: *mut *mut PrxModel, params: ModelParams) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(PrxStatus::NullPointer, "output handle pointer is null"));
    }
    let h = Box::into_raw(Box::new(PrxModel { params }));
    // SAFETY: checked non-null above; the caller provides writable storage.
    unsafe { *out = h };
    Ok(())
}

/// ABI version of this library.
#[no_mangle]
pub extern "C" fn prx_abi_version() -> u32 {
    PRX_ABI_VERSION
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn prx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn prx_status_str(status: PrxStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PrxStatus::Ok => c"ok",
        PrxStatus::NullPointer => c"null pointer",
        PrxStatus::InvalidArgument => c"invalid argument",
        PrxStatus::DimensionMismatch => c"dimension mismatch",
        PrxStatus::UndefinedMetric => c"undefined metric",
        PrxStatus::NoObservedValues => c"no observed values",
        PrxStatus::Checkpoint => c"checkpoint error",
        PrxStatus::Io => c"i/o error",
        PrxStatus::Numerical => c"numerical failure",
        PrxStatus::BufferTooSmall => c"buffer too small",
        PrxStatus::Panic => c"internal panic",
        PrxStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

/// Loads a `PRXW` checkpoint. On success `*out` owns a new handle that must
/// be released with [`prx_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prx_model_load(path: *const c_char, out: *mut *mut PrxModel) -> PrxStatus {
    guard(|| {
        let p = path_arg(path)?;
        store_handle(out, load_weights(p)?)
    })
}

/// Creates a randomly initialized model.
///
/// # Safety
/// `config` must point to a valid struct; `quantiles` to
/// `config->n_quantiles` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prx_model_init(
    config: *const PrxModelConfig,
    quantiles: *const f64,
    seed: u64,
    out: *mut *mut PrxModel,
) -> PrxStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| fail(PrxStatus::NullPointer, "config is null"))?;
        let q = slice_in(quantiles, c.n_quantiles as usize, "quantiles")?;
        let cfg = ModelConfig {
            m_in: c.m_in as usize,
            m_out: c.m_out as usize,
            d: c.d as usize,
            d_ff: c.d_ff as usize,
            n_heads: c.n_heads as usize,
            n_blocks: c.n_blocks as usize,
            quantiles: q.to_vec(),
        };
        store_handle(out, ModelParams::init(&cfg, &mut rng::seeded(seed))?)
    })
}

/// Writes the model as a `PRXW` checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn prx_model_save(model: *const PrxModel, path: *const c_char) -> PrxStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_weights(path_arg(path)?, &m.params)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prx_model_free(model: *mut PrxModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prx_model_config(model: *const PrxModel, out: *mut PrxModelConfig) -> PrxStatus {
    guard(|| {
        let c = &model_ref(model)?.params.config;
        let o = out.as_mut().ok_or_else(|| fail(PrxStatus::NullPointer, "out is null"))?;
        let u = |v: usize| v as u32;
        *o = PrxModelConfig {
            m_in: u(c.m_in),
            m_out: u(c.m_out),
            d: u(c.d),
            d_ff: u(c.d_ff),
            n_heads: u(c.n_heads),
            n_blocks: u(c.n_blocks),
            n_quantiles: u(c.n_quantiles()),
        };
        Ok(())
    })
}

/// Copies the quantile levels into `out` (capacity `cap`).
///
/// # Safety
/// `model` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn prx_model_quantiles(model: *const PrxModel, out: *mut f64, cap: usize) -> PrxStatus {
    guard(|| {
        let q = &model_ref(model)?.params.config.quantiles;
        if cap < q.len() {
            return Err(fail(PrxStatus::BufferTooSmall, format!("need {} doubles, got {cap}", q.len())));
        }
        slice_out(out, q.len(), "out")?.copy_from_slice(q);
        Ok(())
    })
}

/// Number of learnable parameters, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn prx_model_parameter_count(model: *const PrxModel) -> u64 {
    model.as_ref().map_or(0, |m| m.params.parameter_count() as u64)
}

/// Quantile forecast of `horizon` steps. `observed` may be NULL (all
/// observed); otherwise nonzero bytes mark observed steps. Writes
/// `horizon × n_quantiles` doubles, row-major, nondecreasing per row.
///
/// # Safety
/// `values` (and `observed` when non-NULL) must hold `len` elements; `out`
/// must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn prx_forecast(
    model: *const PrxModel,
    values: *const f64,
    observed: *const u8,
    len: usize,
    horizon: usize,
    out: *mut f64,
    out_len: usize,
) -> PrxStatus {
    guard(|| {
        let m = model_ref(model)?;
        let v = slice_in(values, len, "values")?;
        let obs: Vec<bool> = if observed.is_null() {
            vec![true; len]
        } else {
            slice_in(observed, len, "observed")?.iter().map(|&b| b != 0).collect()
        };
        let need = horizon * m.params.config.n_quantiles();
        if out_len < need {
            return Err(fail(PrxStatus::BufferTooSmall, format!("need {need} doubles, got {out_len}")));
        }
        let series = TimeSeries::with_mask("ffi", v.to_vec(), obs)?;
        let f = forecast(&series, horizon, &m.params)?;
        let dst = slice_out(out, need, "out")?;
        dst.copy_from_slice(f.values.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Seasonal-naive forecast of `horizon` steps from `context`.
///
/// # Safety
/// `context` must hold `len` doubles; `out` must hold `horizon` doubles.
#[no_mangle]
pub unsafe extern "C" fn prx_seasonal_naive(
    context: *const f64,
    len: usize,
    season: usize,
    horizon: usize,
    out: *mut f64,
) -> PrxStatus {
    guard(|| {
        let c = slice_in(context, len, "context")?;
        if season == 0 {
            return Err(fail(PrxStatus::InvalidArgument, "season must be positive"));
        }
        let f = seasonal_naive(c, season, horizon)?;
        slice_out(out, horizon, "out")?.copy_from_slice(&f);
        Ok(())
    })
}

/// Mean absolute scaled error of a point forecast.
///
/// # Safety
/// `forecast`/`actual` must hold `horizon` doubles, `context` `len` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prx_mase(
    forecast_values: *const f64,
    actual: *const f64,
    horizon: usize,
    context: *const f64,
    len: usize,
    season: usize,
    out: *mut f64,
) -> PrxStatus {
    guard(|| {
        let f = slice_in(forecast_values, horizon, "forecast")?;
        let a = slice_in(actual, horizon, "actual")?;
        let c = slice_in(context, len, "context")?;
        if season == 0 {
            return Err(fail(PrxStatus::InvalidArgument, "season must be positive"));
        }
        let v = mase(f, a, c, season)?;
        *out.as_mut().ok_or_else(|| fail(PrxStatus::NullPointer, "out is null"))? = v;
        Ok(())
    })
}

/// Weighted quantile loss of `horizon × n_quantiles` row-major predictions.
///
/// # Safety
/// Pointers must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prx_wql(
    predictions: *const f64,
    actual: *const f64,
    horizon: usize,
    quantiles: *const f64,
    n_quantiles: usize,
    out: *mut f64,
) -> PrxStatus {
    guard(|| {
        let p = slice_in(predictions, horizon * n_quantiles, "predictions")?;
        let a = slice_in(actual, horizon, "actual")?;
        let q = slice_in(quantiles, n_quantiles, "quantiles")?;
        let pred = ndarray::ArrayView2::from_shape((horizon, n_quantiles), p)
            .map_err(|e| fail(PrxStatus::DimensionMismatch, e.to_string()))?;
        let v = wql(pred, a, q)?;
        *out.as_mut().ok_or_else(|| fail(PrxStatus::NullPointer, "out is null"))? = v;
        Ok(())
    })
}
