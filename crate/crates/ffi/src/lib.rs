//! C ABI over the loadcast core: opaque model handles, status codes, and a
//! thread-local last-error message. All buffers are caller-allocated,
//! row-major f64.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use loadcast::autograd::Tensor;
use loadcast::decompose::decompose;
use loadcast::error::{Error, ErrorKind};
use loadcast::eval::{mae, mse};
use loadcast::model::{ForecastModel, ModelConfig, CHANNELS};

/// Result of every fallible call. Non-zero values mirror the CLI exit codes;
/// `LC_NULL_ARGUMENT` flags a null pointer before anything else runs.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LcStatus {
    LcOk = 0,
    LcConfigError = 1,
    LcDataError = 2,
    LcRuntimeError = 3,
    LcNullArgument = 4,
}

/// Opaque forecasting model handle.
pub struct LcModel {
    inner: ForecastModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn status_of(err: &Error) -> LcStatus {
    match err.kind() {
        ErrorKind::Config => LcStatus::LcConfigError,
        ErrorKind::Data => LcStatus::LcDataError,
        ErrorKind::Runtime => LcStatus::LcRuntimeError,
    }
}

fn fail(err: Error) -> LcStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Seed-initialized model on the built-in toy backbone with default
/// dimensions (512-step input, 96-step horizon, 3 channels).
/// Returns null on failure; see `lc_last_error_message`.
#[no_mangle]
pub extern "C" fn lc_model_new_toy(seed: u64) -> *mut LcModel {
    let mut cfg = ModelConfig::toy_default();
    cfg.seed = seed;
    match ForecastModel::new_toy(cfg) {
        Ok(inner) => Box::into_raw(Box::new(LcModel { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Load a model from a JSON checkpoint written by the CLI or library.
/// Returns null on failure; see `lc_last_error_message`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lc_model_load(path: *const c_char) -> *mut LcModel {
    if path.is_null() {
        set_error("null path");
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match ForecastModel::load(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(LcModel { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `lc_model_new_toy` / `lc_model_load` and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_model_free(model: *mut LcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input window length (steps) expected by `lc_forecast`.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_input_len(model: *const LcModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.cfg.input_len
}

/// Forecast horizon length (steps) produced by `lc_forecast`.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_horizon(model: *const LcModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.cfg.horizon
}

/// Run one forecast. `input` is row-major (input_len x 3); `out` receives
/// row-major (horizon x 3) physical-unit values.
///
/// # Safety
/// `input` must hold `input_len * 3` doubles and `out` must have room for
/// `lc_model_horizon(model) * 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_forecast(
    model: *const LcModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
) -> LcStatus {
    if model.is_null() || input.is_null() || out.is_null() {
        set_error("null argument");
        return LcStatus::LcNullArgument;
    }
    let m = &(*model).inner;
    if input_len != m.cfg.input_len {
        return fail(Error::Shape {
            expected: format!("input_len {}", m.cfg.input_len),
            actual: format!("{input_len}"),
        });
    }
    let data = std::slice::from_raw_parts(input, input_len * CHANNELS).to_vec();
    let window = loadcast::data::WindowPair {
        household_id: 0,
        t0: 0,
        input: Tensor::from_vec(input_len, CHANNELS, data),
        target: Tensor::zeros(m.cfg.horizon, CHANNELS),
    };
    match m.predict(&window) {
        Ok(pred) => {
            let dst = std::slice::from_raw_parts_mut(out, m.cfg.horizon * CHANNELS);
            dst.copy_from_slice(&pred.physical.data);
            LcStatus::LcOk
        }
        Err(e) => fail(e),
    }
}

/// Additive seasonal-trend decomposition of one series. Each output buffer
/// receives `n` doubles; any of them may be null to skip that component.
///
/// # Safety
/// `series` must hold `n` doubles; non-null outputs must have room for `n`.
#[no_mangle]
pub unsafe extern "C" fn lc_decompose(
    series: *const f64,
    n: usize,
    period: usize,
    trend: *mut f64,
    seasonal: *mut f64,
    residual: *mut f64,
) -> LcStatus {
    if series.is_null() {
        set_error("null argument");
        return LcStatus::LcNullArgument;
    }
    let values = std::slice::from_raw_parts(series, n);
    match decompose(values, period) {
        Ok(d) => {
            for (ptr, vals) in [(trend, &d.trend), (seasonal, &d.seasonal), (residual, &d.residual)] {
                if !ptr.is_null() {
                    std::slice::from_raw_parts_mut(ptr, n).copy_from_slice(vals);
                }
            }
            LcStatus::LcOk
        }
        Err(e) => fail(e),
    }
}

unsafe fn metric(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    out: *mut f64,
    f: fn(&Tensor, &Tensor) -> loadcast::error::Result<f64>,
) -> LcStatus {
    if y.is_null() || yhat.is_null() || out.is_null() {
        set_error("null argument");
        return LcStatus::LcNullArgument;
    }
    if n == 0 {
        return fail(Error::EmptyEvaluation);
    }
    let a = Tensor::from_vec(n, 1, std::slice::from_raw_parts(y, n).to_vec());
    let b = Tensor::from_vec(n, 1, std::slice::from_raw_parts(yhat, n).to_vec());
    match f(&a, &b) {
        Ok(v) => {
            *out = v;
            LcStatus::LcOk
        }
        Err(e) => fail(e),
    }
}

/// Mean squared error over `n` paired values.
///
/// # Safety
/// `y` and `yhat` must hold `n` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_mse(y: *const f64, yhat: *const f64, n: usize, out: *mut f64) -> LcStatus {
    metric(y, yhat, n, out, mse)
}

/// Mean absolute error over `n` paired values.
///
/// # Safety
/// `y` and `yhat` must hold `n` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_mae(y: *const f64, yhat: *const f64, n: usize, out: *mut f64) -> LcStatus {
    metric(y, yhat, n, out, mae)
}
