//! C interface to `lora_curve`.
//!
//! Every fallible function returns an [`LcStatus`]; on failure a message is
//! available from [`lc_last_error`] on the same thread. Curves are opaque
//! [`LcCurve`] handles loaded from checkpoint files and released with
//! [`lc_curve_free`]. Matrices are dense, row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::Array2;

use lora_curve::bma::{self, GridPredictions, Temperature};
use lora_curve::checkpoint::Checkpoint;
use lora_curve::curve::{self, make_eval_grid, ControlPointSet};
use lora_curve::data::Features;
use lora_curve::network::{InputSpec, LoraNetwork};
use lora_curve::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument: wrong size, out-of-range value or invalid UTF-8.
    InvalidArgument = 2,
    /// A length given by the caller does not match the data.
    DimensionMismatch = 3,
    MissingFile = 4,
    /// Unreadable or inconsistent checkpoint.
    Format = 5,
    Io = 6,
    NonFinite = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// A trained curve with the network it was trained on.
pub struct LcCurve {
    net: LoraNetwork,
    points: ControlPointSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> LcStatus {
    match err {
        Error::Domain(_) | Error::DegenerateCurve(_) | Error::Config(_) => LcStatus::InvalidArgument,
        Error::Dimension { .. } => LcStatus::DimensionMismatch,
        Error::NonFinite { .. } | Error::Diverged { .. } => LcStatus::NonFinite,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) => LcStatus::Format,
        Error::MissingFile(_) => LcStatus::MissingFile,
        Error::Io(_) => LcStatus::Io,
    }
}

struct Failure(LcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: LcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, records any error or panic, and clears the message on success.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LcStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(LcStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(LcStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a>(curve: *const LcCurve) -> Result<&'a LcCurve, Failure> {
    curve.as_ref().ok_or(Failure(LcStatus::NullPointer, "curve handle is null".into()))
}

fn write_out(out: &mut [f64], values: impl ExactSizeIterator<Item = f64>, what: &str) -> Result<(), Failure> {
    if out.len() != values.len() {
        return fail(
            LcStatus::DimensionMismatch,
            format!("{what} needs {} values, buffer holds {}", values.len(), out.len()),
        );
    }
    for (o, v) in out.iter_mut().zip(values) {
        *o = v;
    }
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize, what: &str) -> Result<Array2<f64>, Failure> {
    match rows.checked_mul(cols) {
        Some(len) if len == data.len() => Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("checked")),
        _ => fail(LcStatus::DimensionMismatch, format!("{what} is not {rows} x {cols}")),
    }
}

fn temperature(value: f64) -> Result<Temperature, Failure> {
    Ok(Temperature::new(value)?)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a checkpoint (and its JSON sidecar) into a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_load(path: *const c_char, out: *mut *mut LcCurve) -> LcStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(LcStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .or_else(|_| fail(LcStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let ck = Checkpoint::load(Path::new(path))?;
        let net = ck.network()?;
        *out = Box::into_raw(Box::new(LcCurve { net, points: ck.points }));
        Ok(())
    })
}

/// Release a handle; null is ignored.
///
/// # Safety
/// `curve` must come from [`lc_curve_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_free(curve: *mut LcCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Adapter dimension `D`, or 0 for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_dim(curve: *const LcCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.points.dim())
}

/// Number of segments; `t` ranges over `[0, segments]`.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_num_segments(curve: *const LcCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.points.config().num_segments())
}

/// Input width for dense networks, sequence length for token networks.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_input_dim(curve: *const LcCurve) -> usize {
    curve.as_ref().map_or(0, |c| match c.net.spec().input {
        InputSpec::Dense { dim } => dim,
        InputSpec::Tokens { seq_len, .. } => seq_len,
    })
}

/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_num_classes(curve: *const LcCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.net.spec().num_classes)
}

/// Adapter vector at `t`, written to `out[0..len]` with `len == D`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_eval(curve: *const LcCurve, t: f64, out: *mut f64, len: usize) -> LcStatus {
    guard(|| {
        let c = handle(curve)?;
        let out = slice_mut(out, len, "out")?;
        let theta = c.points.eval(t)?;
        write_out(out, theta.iter().copied(), "curve point")
    })
}

fn dense_inputs(c: &LcCurve, x: &[f64], n: usize, d: usize) -> Result<Features, Failure> {
    match c.net.spec().input {
        InputSpec::Dense { .. } => Ok(Features::Dense(matrix(x, n, d, "features")?)),
        InputSpec::Tokens { .. } => {
            let tokens = matrix(x, n, d, "tokens")?;
            if tokens.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return fail(LcStatus::InvalidArgument, "token ids must be non-negative integers");
            }
            Ok(Features::Tokens(tokens.mapv(|v| v as usize)))
        }
    }
}

/// Class probabilities at `t` for `n` inputs of width `d` (token networks
/// take integer-valued ids). `out` receives `n x C` values.
///
/// # Safety
/// `x` must hold `n * d` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_predict(
    curve: *const LcCurve,
    t: f64,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> LcStatus {
    guard(|| {
        let c = handle(curve)?;
        let inputs = dense_inputs(c, slice(x, n.saturating_mul(d), "x")?, n, d)?;
        let out = slice_mut(out, out_len, "out")?;
        let probs = c.net.predict(&c.points.eval(t)?, &inputs)?;
        write_out(out, probs.iter().copied(), "probabilities")
    })
}

/// Grid-averaged prediction over `grid_m` equispaced points (0 selects
/// `2 N_cp - 1`) with uniform weights. Optionally writes the per-example
/// mutual information to `mi_out` (`n` values; may be null).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_curve_bma_predict(
    curve: *const LcCurve,
    grid_m: usize,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
    mi_out: *mut f64,
) -> LcStatus {
    guard(|| {
        let c = handle(curve)?;
        let inputs = dense_inputs(c, slice(x, n.saturating_mul(d), "x")?, n, d)?;
        let out = slice_mut(out, out_len, "out")?;
        let grid = make_eval_grid(c.points.config(), (grid_m > 0).then_some(grid_m))?;
        let gp = bma::bma_predict_on_grid(&c.net, &c.points, &inputs, grid, Temperature::Infinite, None)?;
        write_out(out, gp.mixture().iter().copied(), "probabilities")?;
        if !mi_out.is_null() {
            let mi = bma::mutual_information(&gp)?;
            write_out(slice_mut(mi_out, n, "mi_out")?, mi.per_example.into_iter(), "mutual information")?;
        }
        Ok(())
    })
}

/// Bernstein basis polynomial `b_{i,degree}(t)` for `t` in `[0, 1]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_bernstein(i: usize, degree: usize, t: f64, out: *mut f64) -> LcStatus {
    guard(|| {
        let out = slice_mut(out, 1, "out")?;
        out[0] = curve::bernstein_basis(i, degree, t)?;
        Ok(())
    })
}

/// Grid weights from per-point data log-likelihoods; pass `INFINITY` for
/// uniform weights.
///
/// # Safety
/// `log_likelihoods` and `out` must hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_temperature_weights(
    log_likelihoods: *const f64,
    m: usize,
    temperature_value: f64,
    out: *mut f64,
) -> LcStatus {
    guard(|| {
        let ll = slice(log_likelihoods, m, "log_likelihoods")?;
        let out = slice_mut(out, m, "out")?;
        let w = bma::temperature_weights(ll, temperature(temperature_value)?)?;
        write_out(out, w.into_iter(), "weights")
    })
}

/// Mutual information of `m` predictive tables of shape `n x c` (stacked
/// grid-point-major in `probs`) under `weights`. Writes the mean to
/// `mean_out` and, when non-null, `n` per-example values to `per_example`.
///
/// # Safety
/// `probs` must hold `m * n * c` doubles, `weights` `m`.
#[no_mangle]
pub unsafe extern "C" fn lc_mutual_information(
    probs: *const f64,
    m: usize,
    n: usize,
    c: usize,
    weights: *const f64,
    mean_out: *mut f64,
    per_example: *mut f64,
) -> LcStatus {
    guard(|| {
        let table = n.saturating_mul(c);
        let probs = slice(probs, m.saturating_mul(table), "probs")?;
        let weights = slice(weights, m, "weights")?;
        let mean_out = slice_mut(mean_out, 1, "mean_out")?;
        if m == 0 {
            return fail(LcStatus::InvalidArgument, "at least one grid point is needed");
        }
        let tables = probs
            .chunks(table.max(1))
            .map(|chunk| matrix(chunk, n, c, "probability table"))
            .collect::<Result<Vec<_>, _>>()?;
        let grid = (0..m).map(|j| j as f64).collect();
        let gp = GridPredictions::new(grid, tables, weights.to_vec())?;
        let mi = bma::mutual_information(&gp)?;
        mean_out[0] = mi.mean;
        if !per_example.is_null() {
            write_out(slice_mut(per_example, n, "per_example")?, mi.per_example.into_iter(), "per-example MI")?;
        }
        Ok(())
    })
}

/// Expected calibration error of `n x c` probabilities against `labels`
/// using `bins` equal-width confidence bins.
///
/// # Safety
/// `probs` must hold `n * c` doubles and `labels` `n` entries.
#[no_mangle]
pub unsafe extern "C" fn lc_expected_calibration_error(
    probs: *const f64,
    n: usize,
    c: usize,
    labels: *const u32,
    bins: usize,
    out: *mut f64,
) -> LcStatus {
    guard(|| {
        let p = matrix(slice(probs, n.saturating_mul(c), "probs")?, n, c, "probs")?;
        let labels: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        if labels.iter().any(|&l| l >= c) {
            return fail(LcStatus::InvalidArgument, "label out of range");
        }
        let out = slice_mut(out, 1, "out")?;
        out[0] = bma::expected_calibration_error(&p, &labels, bins)?;
        Ok(())
    })
}
