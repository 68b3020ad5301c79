//! C interface to `hiernest`.
//!
//! Models are opaque `HnModel` handles created by `hn_model_load`,
//! `hn_model_from_json` or `hn_fit` and released with `hn_model_free`. Every
//! fallible call returns an `HnStatus`; on failure `hn_last_error` gives a
//! message for the calling thread, valid until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hiernest::hierarchy::INTERCEPT;
use hiernest::model::{fit_model, Method, ModelArtifact};
use hiernest::{Error, HierDataset, HierarchySpec, Level, SolverConfig};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidModel = 4,
    InvalidInput = 5,
    DimensionMismatch = 6,
    NotConverged = 7,
    Panic = 8,
}

/// Penalty selector for `hn_fit`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnPenalty {
    Oglasso = 0,
    Lasso = 1,
    PooledLasso = 2,
}

/// Level at which a row was scored.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnLevel {
    Overall = 0,
    Mdc = 1,
    Drg = 2,
}

/// Opaque fitted model.
pub struct HnModel {
    inner: ModelArtifact,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> HnStatus {
    match e {
        Error::Io(_) => HnStatus::Io,
        Error::InvalidModel(_) | Error::Json(_) => HnStatus::InvalidModel,
        Error::DimensionMismatch(_) | Error::LabelMismatch { .. } => HnStatus::DimensionMismatch,
        _ => HnStatus::InvalidInput,
    }
}

fn fail(status: HnStatus, msg: impl Into<String>) -> HnStatus {
    set_error(msg);
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HnStatus, String)>) -> HnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HnStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(HnStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> (HnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (HnStatus, String) {
    (HnStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (HnStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HnStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

unsafe fn str_array(p: *const *const c_char, n: usize) -> Result<Vec<String>, (HnStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    (0..n).map(|i| str_arg(*p.add(i)).map(str::to_string)).collect()
}

unsafe fn model_ref<'a>(model: *const HnModel) -> Result<&'a ModelArtifact, (HnStatus, String)> {
    model.as_ref().map(|m| &m.inner).ok_or_else(null)
}

unsafe fn emit(out: *mut *mut HnModel, model: ModelArtifact) -> Result<(), (HnStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(HnModel { inner: model }));
    Ok(())
}

/// Message of the calling thread's last failure (empty if none). Owned by the library.
#[no_mangle]
pub extern "C" fn hn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version string. Owned by the library.
#[no_mangle]
pub extern "C" fn hn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a model JSON file into a new handle.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_load(path: *const c_char, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        let path = str_arg(path)?;
        emit(out, ModelArtifact::load(path).map_err(lift)?)
    })
}

/// Parses model JSON into a new handle.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_from_json(json: *const c_char, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        let json = str_arg(json)?;
        emit(out, ModelArtifact::from_json(json).map_err(lift)?)
    })
}

/// Writes the model as JSON to `path`.
///
/// # Safety
/// `model` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn hn_model_save(model: *const HnModel, path: *const c_char) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.save(str_arg(path)?).map_err(lift)
    })
}

/// Model JSON as a new string; release it with `hn_string_free`.
///
/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_to_json(model: *const HnModel, out: *mut *mut c_char) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null());
        }
        let json = m.to_json().map_err(lift)?;
        *out = CString::new(json).map_err(|e| (HnStatus::InvalidModel, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or come from `hn_model_to_json`.
#[no_mangle]
pub unsafe extern "C" fn hn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_model_free(model: *mut HnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of model features, intercept included.
///
/// # Safety
/// `model` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hn_model_n_features(model: *const HnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.features.len())
}

/// Penalty level of the model, NaN for a null handle.
///
/// # Safety
/// `model` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hn_model_lambda(model: *const HnModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.inner.lambda)
}

/// Scores `n_rows` rows of a row-major `n_rows x n_cols` matrix whose columns
/// follow the model features (intercept column included, raw scale).
///
/// `mdc` and `out_level` may be null. Unknown DRGs fall back to their MDC
/// (when `mdc` names a known one) or to the overall effects.
///
/// # Safety
/// All non-null pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hn_model_predict(
    model: *const HnModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    drg: *const *const c_char,
    mdc: *const *const c_char,
    out_prob: *mut f64,
    out_level: *mut HnLevel,
) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if x.is_null() || out_prob.is_null() {
            return Err(null());
        }
        let data = std::slice::from_raw_parts(x, n_rows * n_cols).to_vec();
        let x = ndarray::Array2::from_shape_vec((n_rows, n_cols), data).map_err(|e| (HnStatus::DimensionMismatch, e.to_string()))?;
        let drg = str_array(drg, n_rows)?;
        let mdc = if mdc.is_null() { None } else { Some(str_array(mdc, n_rows)?) };
        let preds = m.predict(&x, &drg, mdc.as_deref()).map_err(lift)?;
        for (i, p) in preds.iter().enumerate() {
            *out_prob.add(i) = p.probability;
            if !out_level.is_null() {
                *out_level.add(i) = match p.level {
                    Level::Overall => HnLevel::Overall,
                    Level::Mdc => HnLevel::Mdc,
                    Level::Drg => HnLevel::Drg,
                };
            }
        }
        Ok(())
    })
}

/// Fits a model at a fixed `lambda`.
///
/// `x` is row-major `n_rows x n_cols` without an intercept column (one is
/// prepended; features are named `x1..x<n_cols>`). `y` holds 0/1 outcomes and
/// `drg` each row's DRG. The hierarchy is given as `n_pairs` (DRG, MDC) pairs.
/// `alpha1` and `alpha2` are ignored unless `penalty` is `Oglasso`. Returns
/// `NotConverged` (with the model still written to `out`) when the solver hit
/// its sweep cap.
///
/// # Safety
/// All pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hn_fit(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    y: *const f64,
    drg: *const *const c_char,
    pair_drg: *const *const c_char,
    pair_mdc: *const *const c_char,
    n_pairs: usize,
    penalty: HnPenalty,
    alpha1: f64,
    alpha2: f64,
    lambda: f64,
    out: *mut *mut HnModel,
) -> HnStatus {
    let mut converged = true;
    let status = guard(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return Err(null());
        }
        let p = n_cols + 1;
        let mut data = Vec::with_capacity(n_rows * p);
        for i in 0..n_rows {
            data.push(1.0);
            data.extend_from_slice(std::slice::from_raw_parts(x.add(i * n_cols), n_cols));
        }
        let xm = ndarray::Array2::from_shape_vec((n_rows, p), data).map_err(|e| (HnStatus::DimensionMismatch, e.to_string()))?;
        let y = std::slice::from_raw_parts(y, n_rows).to_vec();
        let drg = str_array(drg, n_rows)?;
        let pairs: Vec<(String, String)> = str_array(pair_drg, n_pairs)?.into_iter().zip(str_array(pair_mdc, n_pairs)?).collect();
        let names = std::iter::once(INTERCEPT.to_string()).chain((1..=n_cols).map(|j| format!("x{j}"))).collect();
        let spec = HierarchySpec::build(&pairs, &drg).map_err(lift)?;
        let data = HierDataset::new(y, xm, drg, names).map_err(lift)?;
        let method = match penalty {
            HnPenalty::Oglasso => Method::Oglasso { alpha1, alpha2 },
            HnPenalty::Lasso => Method::Lasso,
            HnPenalty::PooledLasso => Method::PooledLasso,
        };
        let (model, path) = fit_model(&data, &spec, method, lambda, &SolverConfig::default()).map_err(lift)?;
        converged = path.converged();
        emit(out, model)
    });
    if status == HnStatus::Ok && !converged {
        return fail(HnStatus::NotConverged, "solver did not converge");
    }
    status
}

/// AUROC of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hn_auroc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> HnStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null());
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l = std::slice::from_raw_parts(labels, n);
        *out = hiernest::metrics::auroc(s, l).map_err(lift)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { hn_model_load(ptr::null(), &mut out) }, HnStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(hn_last_error()) }.to_str().unwrap();
        assert!(msg.contains("null"));
        unsafe { hn_model_free(ptr::null_mut()) };
    }

    #[test]
    fn version_is_crate_version() {
        let v = unsafe { CStr::from_ptr(hn_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
