//! C ABI for the pcm fitter.
//!
//! Datasets and fits are opaque handles created by `pcm_*` constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! `PcmStatus`; on failure `pcm_last_error()` describes the cause for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pcm::cli::{read_dataset_file, CliError, FitReport};
use pcm::domain::{CfMode, Dataset, KnnK, PcmConfig, PreclusterMode, Subject};
use pcm::synthgen::{generate, SynthSpec};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Io = 4,
    Fit = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmPrecluster {
    Box = 0,
    Kmeans = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmCounterfactual {
    /// Use the counterfactual outcomes stored in the dataset.
    Given = 0,
    /// Estimate counterfactuals for treated subjects from nearby controls.
    Knn = 1,
    /// Compare treated and control means inside each cluster.
    ControlDiff = 2,
}

/// Fit settings. Start from `pcm_config_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcmFitConfig {
    pub precluster: PcmPrecluster,
    pub counterfactual: PcmCounterfactual,
    /// Neighbours for `Knn`; 0 picks the square root of the control count.
    pub knn_k: u32,
    pub em_iters: u32,
    pub tau_multiplier: f64,
    pub k_max: u32,
    pub seed: u64,
}

/// Opaque dataset handle.
pub struct PcmDataset {
    inner: Dataset,
}

/// Opaque fit handle.
pub struct PcmFit {
    fit: pcm::PcmFit,
    config: PcmConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: PcmStatus, msg: impl Into<String>) -> PcmStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into `PcmStatus::Panic`.
fn guard(f: impl FnOnce() -> PcmStatus) -> PcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PcmStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn to_config(c: &PcmFitConfig) -> PcmConfig {
    let cf_mode = match c.counterfactual {
        PcmCounterfactual::Given => CfMode::Given,
        PcmCounterfactual::Knn if c.knn_k == 0 => CfMode::Knn(KnnK::Auto),
        PcmCounterfactual::Knn => CfMode::Knn(KnnK::Fixed(c.knn_k as usize)),
        PcmCounterfactual::ControlDiff => CfMode::ControlDiff,
    };
    PcmConfig {
        precluster: match c.precluster {
            PcmPrecluster::Box => PreclusterMode::Box,
            PcmPrecluster::Kmeans => PreclusterMode::Kmeans,
        },
        cf_mode,
        em_iters: c.em_iters as usize,
        tau_multiplier: c.tau_multiplier,
        k_max: c.k_max as usize,
        seed: c.seed,
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the last failed call on this thread, or "" if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pcm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn pcm_config_default() -> PcmFitConfig {
    let d = PcmConfig::default();
    PcmFitConfig {
        precluster: PcmPrecluster::Box,
        counterfactual: PcmCounterfactual::Given,
        knn_k: 0,
        em_iters: d.em_iters as u32,
        tau_multiplier: d.tau_multiplier,
        k_max: d.k_max as u32,
        seed: d.seed,
    }
}

/// Draws a synthetic trial from the default layout with `n` subjects and
/// outcome noise `sigma`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_generate(
    n: usize,
    sigma: f64,
    seed: u64,
    out: *mut *mut PcmDataset,
) -> PcmStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcmStatus::NullPointer, "out is null");
        }
        let spec = SynthSpec {
            n,
            sigma,
            seed,
            ..SynthSpec::default()
        };
        match generate(&spec) {
            Ok(inner) => {
                store(out, PcmDataset { inner });
                PcmStatus::Ok
            }
            Err(e) => fail(PcmStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Reads a dataset in the CSV layout written by `pcm generate`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_from_csv(path: *const c_char, out: *mut *mut PcmDataset) -> PcmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PcmStatus::NullPointer, "path or out is null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PcmStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match read_dataset_file(Path::new(path)) {
            Ok(inner) => {
                store(out, PcmDataset { inner });
                PcmStatus::Ok
            }
            Err(CliError::Io(m)) => fail(PcmStatus::Io, m),
            Err(CliError::Usage(m)) => fail(PcmStatus::InvalidData, m),
        }
    })
}

/// Builds a dataset from column arrays.
///
/// `x` holds `n * d` features in row-major order. `treated[i]` is nonzero
/// for treated subjects. `ybar` may be null; a NaN entry marks a missing
/// counterfactual.
///
/// # Safety
/// Every non-null array must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_from_arrays(
    n: usize,
    d: usize,
    x: *const f64,
    treated: *const u8,
    y: *const f64,
    ybar: *const f64,
    out: *mut *mut PcmDataset,
) -> PcmStatus {
    guard(|| {
        if out.is_null() || (n > 0 && (x.is_null() || treated.is_null() || y.is_null())) {
            return fail(PcmStatus::NullPointer, "x, treated, y or out is null");
        }
        let Some(cells) = n.checked_mul(d) else {
            return fail(PcmStatus::InvalidArgument, "n * d overflows");
        };
        let slice = |p: *const f64, len: usize| if len == 0 { &[][..] } else { std::slice::from_raw_parts(p, len) };
        let xs = slice(x, cells);
        let ys = slice(y, n);
        let ts: &[u8] = if n == 0 { &[] } else { std::slice::from_raw_parts(treated, n) };
        let cf = if ybar.is_null() { None } else { Some(slice(ybar, n)) };
        let subjects = (0..n)
            .map(|i| {
                let mut s = Subject::new(xs[i * d..(i + 1) * d].to_vec(), ts[i] != 0, ys[i]);
                s.ybar = cf.map(|c| c[i]).filter(|v| !v.is_nan());
                s
            })
            .collect();
        let inner = Dataset::new(d, subjects);
        if let Err(e) = inner.validate().into_result() {
            return fail(PcmStatus::InvalidData, e.to_string());
        }
        store(out, PcmDataset { inner });
        PcmStatus::Ok
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_len(ds: *const PcmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_dim(ds: *const PcmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d)
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcm_dataset_free(ds: *mut PcmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits effect levels to `ds`. A null `config` means the defaults.
///
/// # Safety
/// `ds` must be a live dataset handle, `config` null or valid, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit(
    ds: *const PcmDataset,
    config: *const PcmFitConfig,
    out: *mut *mut PcmFit,
) -> PcmStatus {
    guard(|| {
        let (Some(ds), false) = (ds.as_ref(), out.is_null()) else {
            return fail(PcmStatus::NullPointer, "dataset or out is null");
        };
        let config = config.as_ref().map_or_else(PcmConfig::default, to_config);
        match pcm::run_pcm(&ds.inner, &config) {
            Ok(fit) => {
                store(out, PcmFit { fit, config });
                PcmStatus::Ok
            }
            Err(e) => fail(PcmStatus::Fit, e.to_string()),
        }
    })
}

/// Number of fitted levels, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_num_levels(fit: *const PcmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.model.ell_hat())
}

/// Number of subjects covered by the fit, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_len(fit: *const PcmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.model.assignment.len())
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize) -> PcmStatus {
    if cap < src.len() {
        return fail(
            PcmStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", src.len()),
        );
    }
    if !src.is_empty() {
        if out.is_null() {
            return fail(PcmStatus::NullPointer, "out is null");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    PcmStatus::Ok
}

/// Copies the level effects, ascending, into `out[0..pcm_fit_num_levels]`.
///
/// # Safety
/// `fit` must be a live fit handle and `out` hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_level_effects(fit: *const PcmFit, out: *mut f64, cap: usize) -> PcmStatus {
    guard(|| match fit.as_ref() {
        None => fail(PcmStatus::NullPointer, "fit is null"),
        Some(f) => copy_out(&f.fit.model.mu_hat, out, cap),
    })
}

/// Copies each subject's level into `out[0..pcm_fit_len]`; -1 marks a
/// subject outside the fitted population.
///
/// # Safety
/// `fit` must be a live fit handle and `out` hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_assignments(fit: *const PcmFit, out: *mut i64, cap: usize) -> PcmStatus {
    guard(|| match fit.as_ref() {
        None => fail(PcmStatus::NullPointer, "fit is null"),
        Some(f) => {
            let levels: Vec<i64> = f.fit.model.assignment.iter().map(|a| a.map_or(-1, |c| c as i64)).collect();
            copy_out(&levels, out, cap)
        }
    })
}

/// Copies each subject's smoothed effect into `out[0..pcm_fit_len]`; NaN
/// marks a subject without one.
///
/// # Safety
/// `fit` must be a live fit handle and `out` hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_smoothed_effects(fit: *const PcmFit, out: *mut f64, cap: usize) -> PcmStatus {
    guard(|| match fit.as_ref() {
        None => fail(PcmStatus::NullPointer, "fit is null"),
        Some(f) => {
            let vals: Vec<f64> = f.fit.smoothed.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            copy_out(&vals, out, cap)
        }
    })
}

/// The fit report as JSON, in the format written by `pcm fit`. Release the
/// string with `pcm_string_free`.
///
/// # Safety
/// `fit` must be a live fit handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_report_json(fit: *const PcmFit, out: *mut *mut c_char) -> PcmStatus {
    guard(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PcmStatus::NullPointer, "fit or out is null");
        };
        let report = FitReport::new(&f.fit, &f.config);
        match serde_json::to_string_pretty(&report).map(CString::new) {
            Ok(Ok(s)) => {
                *out = s.into_raw();
                PcmStatus::Ok
            }
            Ok(Err(e)) => fail(PcmStatus::Fit, e.to_string()),
            Err(e) => fail(PcmStatus::Fit, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pcm_fit_free(fit: *mut PcmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
