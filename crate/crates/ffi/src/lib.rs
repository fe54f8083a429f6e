//! C ABI over the `antman` core crate.
//!
//! Handles are opaque and owned by the caller once created; free them with
//! the matching `*_free` function. Every fallible call returns an
//! [`AntmanStatus`]; on failure, [`antman_last_error_message`] describes
//! the most recent error on the calling thread. No call unwinds across the
//! boundary: a panic is caught and reported as `ANTMAN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use antman::config::OperatorSpec;
use antman::costmodel::cost_of;
use antman::rnn::{load_model, save_model, FormatError, LstmConfig, LstmModel, SeqMode};
use antman::training::{decide_coefficients, Anchor, LossRecord};
use antman::{CompressedLinear, Error, Exec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntmanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    ShapeMismatch = 4,
    Format = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntmanAnchor {
    Target = 0,
    Mse = 1,
    Kl = 2,
}

/// Cost of one operator application. `reduction` is the exact fraction
/// `reduction_num / reduction_den` of dense over compressed parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AntmanCost {
    pub madds: u64,
    pub params: u64,
    pub reduction_num: u64,
    pub reduction_den: u64,
    pub expands: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AntmanCoefficients {
    pub c_target: f64,
    pub c_mse: f64,
    pub c_kl: f64,
}

/// A compressed linear operator with 64-bit weights.
pub struct AntmanOperator {
    inner: CompressedLinear<f64>,
}

/// A stacked LSTM whose transforms are compressed operators.
pub struct AntmanModel {
    inner: LstmModel<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AntmanStatus {
    match err {
        Error::Config(_) => AntmanStatus::InvalidConfig,
        Error::Shape(_) => AntmanStatus::ShapeMismatch,
        Error::Format(FormatError::Io(_)) | Error::Io(_) => AntmanStatus::Io,
        Error::Format(FormatError::Config(_)) => AntmanStatus::InvalidConfig,
        Error::Format(_) | Error::Json(_) => AntmanStatus::Format,
        _ => AntmanStatus::InvalidArgument,
    }
}

struct Failure(AntmanStatus, String);

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: AntmanStatus, msg: &str) -> Failure {
    Failure(status, msg.to_string())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AntmanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AntmanStatus::Ok,
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
            AntmanStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(AntmanStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AntmanStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(fail(AntmanStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        if len == 0 {
            return Ok(&mut []);
        }
        return Err(fail(AntmanStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), Failure> {
    if expected != found {
        return Err(fail(
            AntmanStatus::ShapeMismatch,
            &format!("{what}: expected length {expected}, got {found}"),
        ));
    }
    Ok(())
}

fn parse_spec(s: &str) -> Result<OperatorSpec, Failure> {
    s.parse::<OperatorSpec>().map_err(Failure::from)
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn antman_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn antman_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an `m x n` operator from a spec such as `"lgp-shuffle:g=10"`,
/// with weights drawn deterministically from `seed`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_create(
    spec: *const c_char,
    m: usize,
    n: usize,
    seed: u64,
    out: *mut *mut AntmanOperator,
) -> AntmanStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(AntmanStatus::NullPointer, "out is null"));
        }
        let cfg = parse_spec(str_arg(spec, "spec")?)?.at(m, n);
        let inner = CompressedLinear::init(&cfg, seed)?;
        *out = Box::into_raw(Box::new(AntmanOperator { inner }));
        Ok(())
    })
}

/// # Safety
/// `op` must come from `antman_operator_create` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_free(op: *mut AntmanOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// # Safety
/// `op` must be a live operator handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_out_dim(op: *const AntmanOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.out_dim())
}

/// # Safety
/// `op` must be a live operator handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_in_dim(op: *const AntmanOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.in_dim())
}

/// # Safety
/// `op` must be a live operator handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_param_count(op: *const AntmanOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.param_count())
}

/// `y = W x`. `x_len` must equal the input dimension and `y_len` the
/// output dimension.
///
/// # Safety
/// `x` and `y` must point to at least `x_len` and `y_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_apply(
    op: *const AntmanOperator,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> AntmanStatus {
    guard(|| {
        let op = op
            .as_ref()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "operator is null"))?;
        let x = in_slice(x, x_len, "x")?;
        let y = out_slice(y, y_len, "y")?;
        check_len("output buffer", op.inner.out_dim(), y.len())?;
        y.copy_from_slice(&op.inner.apply(x)?);
        Ok(())
    })
}

/// Writes the explicit row-major `m x n` matrix into `out`.
///
/// # Safety
/// `out` must point to at least `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn antman_operator_materialize(
    op: *const AntmanOperator,
    out: *mut f64,
    out_len: usize,
) -> AntmanStatus {
    guard(|| {
        let op = op
            .as_ref()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "operator is null"))?;
        let out = out_slice(out, out_len, "out")?;
        check_len("matrix buffer", op.inner.out_dim() * op.inner.in_dim(), out.len())?;
        out.copy_from_slice(op.inner.materialize().as_slice());
        Ok(())
    })
}

/// Exact cost of an `m x n` operator described by `spec`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn antman_cost_of(
    spec: *const c_char,
    m: usize,
    n: usize,
    out: *mut AntmanCost,
) -> AntmanStatus {
    guard(|| {
        let out = out
            .as_mut()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "out is null"))?;
        let cost = cost_of(&parse_spec(str_arg(spec, "spec")?)?.at(m, n))?;
        let narrow = |v: u128| {
            u64::try_from(v).map_err(|_| fail(AntmanStatus::InvalidArgument, "reduction overflows 64 bits"))
        };
        *out = AntmanCost {
            madds: cost.madds,
            params: cost.params,
            reduction_num: narrow(*cost.reduction.numer())?,
            reduction_den: narrow(*cost.reduction.denom())?,
            expands: cost.expands,
        };
        Ok(())
    })
}

/// Balances distillation coefficients from single-loss validation values.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn antman_decide_coefficients(
    target_loss: f64,
    mse_loss: f64,
    kl_loss: f64,
    anchor: AntmanAnchor,
    out: *mut AntmanCoefficients,
) -> AntmanStatus {
    guard(|| {
        let out = out
            .as_mut()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "out is null"))?;
        let anchor = match anchor {
            AntmanAnchor::Target => Anchor::Target,
            AntmanAnchor::Mse => Anchor::Mse,
            AntmanAnchor::Kl => Anchor::Kl,
        };
        let rec = LossRecord {
            target_loss,
            mse_loss,
            kl_loss,
        };
        let c = decide_coefficients(&rec, anchor)
            .map_err(|e| fail(AntmanStatus::InvalidArgument, &e.to_string()))?;
        *out = AntmanCoefficients {
            c_target: c.c_target,
            c_mse: c.c_mse,
            c_kl: c.c_kl,
        };
        Ok(())
    })
}

/// Creates a `layers`-deep LSTM with input and hidden size `dim`, every
/// transform compressed as `spec`.
///
/// # Safety
/// `spec` and `name` must be NUL-terminated strings and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn antman_model_create(
    name: *const c_char,
    spec: *const c_char,
    dim: usize,
    layers: usize,
    seed: u64,
    out: *mut *mut AntmanModel,
) -> AntmanStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(AntmanStatus::NullPointer, "out is null"));
        }
        let name = str_arg(name, "name")?;
        let spec = parse_spec(str_arg(spec, "spec")?)?;
        let inner = LstmModel::init(name, &LstmConfig::uniform(dim, layers, spec), seed)?;
        *out = Box::into_raw(Box::new(AntmanModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn antman_model_load(path: *const c_char, out: *mut *mut AntmanModel) -> AntmanStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(AntmanStatus::NullPointer, "out is null"));
        }
        let inner = load_model(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AntmanModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn antman_model_save(model: *const AntmanModel, path: *const c_char) -> AntmanStatus {
    guard(|| {
        let model = model
            .as_ref()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "model is null"))?;
        save_model(&model.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from `antman_model_create` or `antman_model_load`
/// and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn antman_model_free(model: *mut AntmanModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_model_input_dim(model: *const AntmanModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_model_output_dim(model: *const AntmanModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.output_dim())
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn antman_model_param_count(model: *const AntmanModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Runs `steps` inputs (`steps x input_dim`, row-major) from a zero state
/// and writes the top hidden state per step (`steps x output_dim`).
///
/// # Safety
/// `xs` and `out` must point to at least `steps * input_dim` and `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn antman_model_run(
    model: *const AntmanModel,
    xs: *const f64,
    steps: usize,
    out: *mut f64,
    out_len: usize,
) -> AntmanStatus {
    guard(|| {
        let model = model
            .as_ref()
            .ok_or_else(|| fail(AntmanStatus::NullPointer, "model is null"))?;
        let xs = in_slice(xs, steps * model.inner.input_dim(), "xs")?;
        let out = out_slice(out, out_len, "out")?;
        check_len("output buffer", steps * model.inner.output_dim(), out.len())?;
        out.copy_from_slice(
            &model
                .inner
                .run_flat(steps, xs, SeqMode::Fused, Exec::from_env())?,
        );
        Ok(())
    })
}
