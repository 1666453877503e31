//! C interface to the solver.
//!
//! Datasets and training results are opaque handles created and released
//! through this API. Every function returns a [`DfStatus`]; on failure the
//! message is available from [`df_last_error`] on the same thread. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dualforge::dataio::{self, Dataset, Example};
use dualforge::metrics;
use dualforge::pipeline::{self, TrainOptions, TrainOutcome};
use dualforge::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numeric = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque dataset handle.
pub struct DfDataset {
    inner: Dataset,
}

/// Opaque training result handle.
pub struct DfResult {
    outcome: TrainOutcome,
    metrics_csv: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::InvalidArgument(_) | Error::Domain(_) | Error::Json(_) => DfStatus::InvalidArgument,
        Error::Parse { .. } => DfStatus::Parse,
        Error::Io(_) => DfStatus::Io,
        Error::Numeric(_) => DfStatus::Numeric,
        _ => DfStatus::Runtime,
    }
}

fn guard<F: FnOnce() -> Result<(), (DfStatus, String)>>(f: F) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DfStatus::Panic
        }
    }
}

fn lift<T>(r: dualforge::Result<T>) -> Result<T, (DfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (DfStatus, String) {
    (DfStatus::NullPointer, "null pointer argument".into())
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, (DfStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DfStatus::InvalidArgument, "string is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a LIBSVM file. `min_dim` forces a larger feature dimension (0 for none).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_load(path: *const c_char, min_dim: usize, out: *mut *mut DfDataset) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = c_str(path)?;
        let file = lift(std::fs::File::open(path).map_err(Error::from))?;
        let data = lift(dataio::parse_libsvm(BufReader::new(file), min_dim))?;
        *out = Box::into_raw(Box::new(DfDataset { inner: data }));
        Ok(())
    })
}

/// Builds a dataset from CSR arrays: example `i` owns entries
/// `row_ptr[i]..row_ptr[i+1]` of `indices` (0-based) and `values`.
///
/// # Safety
/// `row_ptr` must hold `n + 1` entries, `labels` `n` entries, and `indices`
/// and `values` `row_ptr[n]` entries each.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_from_csr(
    n: usize,
    d: usize,
    row_ptr: *const usize,
    indices: *const u32,
    values: *const f64,
    labels: *const f64,
    out: *mut *mut DfDataset,
) -> DfStatus {
    guard(|| {
        if out.is_null() || row_ptr.is_null() || labels.is_null() {
            return Err(null());
        }
        let rows = std::slice::from_raw_parts(row_ptr, n + 1);
        let nnz = rows[n];
        if nnz > 0 && (indices.is_null() || values.is_null()) {
            return Err(null());
        }
        let (idx, val) = if nnz == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(indices, nnz), std::slice::from_raw_parts(values, nnz))
        };
        let labels = std::slice::from_raw_parts(labels, n);
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (rows[i], rows[i + 1]);
            if a > b || b > nnz {
                return Err((DfStatus::InvalidArgument, format!("row_ptr not monotone at row {i}")));
            }
            examples.push(lift(Example::new(idx[a..b].to_vec(), val[a..b].to_vec(), labels[i]))?);
        }
        *out = Box::into_raw(Box::new(DfDataset { inner: Dataset::new(examples, d) }));
        Ok(())
    })
}

/// Synthetic linearly generated dataset.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_synthetic(
    n: usize,
    d: usize,
    density: f64,
    seed: u64,
    label_noise: f64,
    out: *mut *mut DfDataset,
) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let data = lift(dataio::gen_synthetic(n, d, density, seed, label_noise))?;
        *out = Box::into_raw(Box::new(DfDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from a `df_dataset_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_shape(data: *const DfDataset, n: *mut usize, d: *mut usize) -> DfStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(null)?;
        if n.is_null() || d.is_null() {
            return Err(null());
        }
        *n = data.inner.n();
        *d = data.inner.d();
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `data` must come from a `df_dataset_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_free(data: *mut DfDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Trains on `data` with options given as a JSON object using the field
/// names of the run manifest; omitted fields take their defaults. Null or
/// an empty string means all defaults.
///
/// # Safety
/// `data` must be a live dataset handle, `options_json` null or a
/// NUL-terminated string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_train(data: *const DfDataset, options_json: *const c_char, out: *mut *mut DfResult) -> DfStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let opts: TrainOptions = if options_json.is_null() {
            TrainOptions::default()
        } else {
            let text = c_str(options_json)?;
            if text.trim().is_empty() {
                TrainOptions::default()
            } else {
                lift(serde_json::from_str(text).map_err(Error::from))?
            }
        };
        let prepared = pipeline::prepare(data.inner.clone(), &opts);
        let outcome = lift(pipeline::train(&prepared, &opts))?;
        let mut buf = Vec::new();
        lift(metrics::write_csv(&mut buf, &outcome.records))?;
        let metrics_csv = CString::new(buf).map_err(|_| (DfStatus::Runtime, "metrics contain NUL".to_string()))?;
        *out = Box::into_raw(Box::new(DfResult { outcome, metrics_csv }));
        Ok(())
    })
}

/// Copies the weight vector into `buf`. `len` receives the dimension; with
/// a null `buf` only the dimension is reported.
///
/// # Safety
/// `res` must be a live result handle; `buf` null or valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn df_result_weights(res: *const DfResult, buf: *mut f64, cap: usize, len: *mut usize) -> DfStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(null)?;
        if len.is_null() {
            return Err(null());
        }
        let w = &res.outcome.model.w;
        *len = w.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < w.len() {
            return Err((DfStatus::BufferTooSmall, format!("need {} entries, got {cap}", w.len())));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// Final primal value, dual value and gap of the original objective, the
/// number of rounds, and whether the target was met.
///
/// # Safety
/// `res` must be a live result handle and the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn df_result_summary(
    res: *const DfResult,
    primal: *mut f64,
    dual: *mut f64,
    gap: *mut f64,
    rounds: *mut u64,
    converged: *mut bool,
) -> DfStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(null)?;
        if primal.is_null() || dual.is_null() || gap.is_null() || rounds.is_null() || converged.is_null() {
            return Err(null());
        }
        let v = res.outcome.original;
        *primal = v.primal;
        *dual = v.dual;
        *gap = v.gap;
        *rounds = res.outcome.rounds;
        *converged = res.outcome.converged;
        Ok(())
    })
}

/// Per-round metrics as CSV text owned by the handle.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn df_result_metrics_csv(res: *const DfResult) -> *const c_char {
    match res.as_ref() {
        Some(r) => r.metrics_csv.as_ptr(),
        None => ptr::null(),
    }
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `res` must come from [`df_train`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn df_result_free(res: *mut DfResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
