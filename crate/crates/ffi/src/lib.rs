//! C ABI over the echolab library.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`EchoStatus`]; the message of the last failure on the calling thread is
//! available from [`echolab_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use echolab::compression::{compress_echoes, decode, encode, CompressedEchoes, CompressionConfig};
use echolab::filters::{build_filter, FilterOperator, FilterSpec};
use echolab::{Error, Image, LinearOperator};

/// Result codes of all fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Format = 4,
    Solver = 5,
    Io = 6,
    Panic = 7,
}

/// Echo orientation: a column (source) or a row (drain) of the operator.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoDirection {
    Source = 0,
    Drain = 1,
}

/// A filtered image together with its state transition operator.
pub struct EchoFilter {
    output: Image,
    op: FilterOperator,
}

/// Low-rank factors of the echo matrix.
pub struct EchoFactors(CompressedEchoes);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(EchoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Argument(_) => EchoStatus::InvalidArgument,
            Error::Parse(_) => EchoStatus::Parse,
            Error::Format(_) => EchoStatus::Format,
            Error::Solver { .. } => EchoStatus::Solver,
            Error::Io(_) => EchoStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EchoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EchoStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EchoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EchoStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
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
            EchoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(invalid(format!("{what} has length {len}, expected {expected}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn rank_arg(rank: usize) -> Option<usize> {
    (rank > 0).then_some(rank)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn echolab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Filters a row-major `nx × ny` image. `spec_json` uses the same JSON as the
/// command line and service, e.g. `{"method":"hd","time":10}`.
///
/// # Safety
/// `data` must point to `nx * ny` doubles, `spec_json` to a NUL-terminated
/// string and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_new(
    data: *const f64,
    nx: usize,
    ny: usize,
    spec_json: *const c_char,
    out: *mut *mut EchoFilter,
) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = nx.checked_mul(ny).ok_or_else(|| invalid("image size overflows"))?;
        let pixels = slice_in(data, len, "data")?;
        let spec: FilterSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)
            .map_err(|e| Fail(EchoStatus::Parse, format!("filter spec: {e}")))?;
        let image = Image::new(nx, ny, pixels.to_vec())?;
        let (output, op) = build_filter(&image, &spec)?;
        *out = Box::into_raw(Box::new(EchoFilter { output, op }));
        Ok(())
    })
}

/// Releases a filter handle. Null is ignored.
///
/// # Safety
/// `filter` must come from [`echolab_filter_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_free(filter: *mut EchoFilter) {
    if !filter.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(filter))));
    }
}

/// Number of pixels N, or 0 for a null handle.
///
/// # Safety
/// `filter` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_dim(filter: *const EchoFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.op.dim())
}

/// Copies the filtered image into `out` (length N).
///
/// # Safety
/// `filter` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_output(filter: *const EchoFilter, out: *mut f64, len: usize) -> EchoStatus {
    guard(|| {
        let f = handle(filter, "filter")?;
        slice_out(out, len, f.output.len(), "out")?.copy_from_slice(f.output.data());
        Ok(())
    })
}

/// Applies the operator (`adjoint == 0`) or its transpose to `x`.
///
/// # Safety
/// `filter` must be a live handle; `x` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_apply(
    filter: *const EchoFilter,
    x: *const f64,
    out: *mut f64,
    len: usize,
    adjoint: i32,
) -> EchoStatus {
    guard(|| {
        let f = handle(filter, "filter")?;
        let n = f.op.dim();
        if len != n {
            return Err(invalid(format!("length {len}, expected {n}")));
        }
        let x = slice_in(x, len, "x")?;
        let y = if adjoint != 0 { f.op.apply_adjoint(x)? } else { f.op.apply(x)? };
        slice_out(out, len, n, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Exact echo of pixel `index` (row-major) written to `out` (length N).
///
/// # Safety
/// `filter` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echolab_filter_echo(
    filter: *const EchoFilter,
    index: usize,
    direction: EchoDirection,
    out: *mut f64,
    len: usize,
) -> EchoStatus {
    guard(|| {
        let f = handle(filter, "filter")?;
        let n = f.op.dim();
        let dst = slice_out(out, len, n, "out")?;
        let echo = match direction {
            EchoDirection::Source => echolab::echo::source_echo(&f.op, index)?,
            EchoDirection::Drain => echolab::echo::drain_echo(&f.op, index)?,
        };
        dst.copy_from_slice(&echo);
        Ok(())
    })
}

/// Compresses all echoes of `filter`. `config_json` may be null for the
/// defaults; otherwise it uses the service JSON, e.g. `{"rank":20,"seed":1}`.
///
/// # Safety
/// `filter` must be a live handle, `config_json` null or NUL-terminated, and
/// `out` writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_compress(
    filter: *const EchoFilter,
    config_json: *const c_char,
    out: *mut *mut EchoFactors,
) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let f = handle(filter, "filter")?;
        let cfg: CompressionConfig = if config_json.is_null() {
            CompressionConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(EchoStatus::Parse, format!("compression config: {e}")))?
        };
        let c = compress_echoes(&f.op, f.output.nx(), f.output.ny(), 1, &cfg)?;
        *out = Box::into_raw(Box::new(EchoFactors(c)));
        Ok(())
    })
}

/// Reads a factor file written by [`echolab_factors_save`] or the CLI.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_load(path: *const c_char, out: *mut *mut EchoFactors) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = std::fs::read(str_arg(path, "path")?).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(EchoFactors(decode(&bytes)?)));
        Ok(())
    })
}

/// Writes the factors to `path`.
///
/// # Safety
/// `factors` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_save(factors: *const EchoFactors, path: *const c_char) -> EchoStatus {
    guard(|| {
        let c = handle(factors, "factors")?;
        std::fs::write(str_arg(path, "path")?, encode(&c.0)).map_err(Error::from)?;
        Ok(())
    })
}

/// Releases a factor handle. Null is ignored.
///
/// # Safety
/// `factors` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_free(factors: *mut EchoFactors) {
    if !factors.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(factors))));
    }
}

/// Stored rank k, or 0 for a null handle.
///
/// # Safety
/// `factors` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_rank(factors: *const EchoFactors) -> usize {
    factors.as_ref().map_or(0, |c| c.0.rank())
}

/// Length N of a reconstructed echo, or 0 for a null handle.
///
/// # Safety
/// `factors` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_dim(factors: *const EchoFactors) -> usize {
    factors.as_ref().map_or(0, |c| c.0.dim())
}

/// Number of echoes stored as unit impulses, or 0 for a null handle.
///
/// # Safety
/// `factors` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_exclusions(factors: *const EchoFactors) -> usize {
    factors.as_ref().map_or(0, |c| c.0.exclusions.len())
}

/// Copies the singular values into `out` (length k).
///
/// # Safety
/// `factors` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_sigma(factors: *const EchoFactors, out: *mut f64, len: usize) -> EchoStatus {
    guard(|| {
        let c = handle(factors, "factors")?;
        slice_out(out, len, c.0.sigma.len(), "out")?.copy_from_slice(&c.0.sigma);
        Ok(())
    })
}

/// Approximate echo of pixel `index` from the first `rank` factors
/// (0 means all of them), written to `out` (length N).
///
/// # Safety
/// `factors` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn echolab_factors_echo(
    factors: *const EchoFactors,
    index: usize,
    direction: EchoDirection,
    rank: usize,
    out: *mut f64,
    len: usize,
) -> EchoStatus {
    guard(|| {
        let c = &handle(factors, "factors")?.0;
        let dst = slice_out(out, len, c.dim(), "out")?;
        let echo = match direction {
            EchoDirection::Source => c.reconstruct_source(index, rank_arg(rank))?,
            EchoDirection::Drain => c.reconstruct_drain(index, rank_arg(rank))?,
        };
        dst.copy_from_slice(&echo);
        Ok(())
    })
}
