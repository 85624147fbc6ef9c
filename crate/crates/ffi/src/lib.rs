//! C ABI over the firepbt library.
//!
//! Every fallible call returns an [`FpStatus`]; on failure the message is
//! available from [`fp_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function. Strings
//! returned by a handle stay valid until that handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use firepbt::binomial::exact_binomial_tail;
use firepbt::curve::{best_score_diff, binom_test_curves, TrainingCurve};
use firepbt::engine::config::ExperimentConfig;
use firepbt::engine::report::build_report;
use firepbt::engine::{run_experiment, RunOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateInput = 3,
    Config = 4,
    Runtime = 5,
    Utf8 = 6,
    Panic = 7,
}

/// A training curve under construction.
pub struct FpCurve {
    inner: TrainingCurve,
}

/// A finished experiment: its event log and report.
pub struct FpRun {
    events: CString,
    report: CString,
}

/// Result of comparing two curves. Overlap indices and the p-value are only
/// meaningful when `has_overlap` is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpComparison {
    pub score_diff: f64,
    pub has_overlap: bool,
    pub r: usize,
    pub s: usize,
    pub n: usize,
    pub used_penalization: bool,
    pub p_value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (FpStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            FpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (FpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn curve_ref<'a>(p: *const FpCurve, what: &str) -> Result<&'a TrainingCurve, Failure> {
    p.as_ref().map(|c| &c.inner).ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New empty curve whose lineage starts at `origin_step`.
#[no_mangle]
pub extern "C" fn fp_curve_new(origin_step: u64) -> *mut FpCurve {
    Box::into_raw(Box::new(FpCurve {
        inner: TrainingCurve::new(origin_step),
    }))
}

/// # Safety
/// `curve` must be null or a pointer from [`fp_curve_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_curve_free(curve: *mut FpCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Appends a point. Steps must increase with a constant spacing and scores
/// must be finite.
///
/// # Safety
/// `curve` must be a live handle from [`fp_curve_new`].
#[no_mangle]
pub unsafe extern "C" fn fp_curve_push(curve: *mut FpCurve, step: u64, score: f64) -> FpStatus {
    guard(|| {
        let c = curve.as_mut().ok_or_else(|| null("curve"))?;
        c.inner
            .push(step, score)
            .map_err(|e| (FpStatus::InvalidArgument, e.to_string()))
    })
}

/// # Safety
/// `curve` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_curve_len(curve: *const FpCurve, out_len: *mut usize) -> FpStatus {
    guard(|| {
        let c = curve_ref(curve, "curve")?;
        let out = out_len.as_mut().ok_or_else(|| null("out_len"))?;
        *out = c.len();
        Ok(())
    })
}

/// Signed comparison of `a` against `b`, with the binomial p-value when the
/// curves overlap.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_compare_curves(a: *const FpCurve, b: *const FpCurve, out: *mut FpComparison) -> FpStatus {
    guard(|| {
        let (a, b) = (curve_ref(a, "a")?, curve_ref(b, "b")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cmp = best_score_diff(a, b).map_err(|e| (FpStatus::DegenerateInput, e.to_string()))?;
        let ov = cmp.overlap.unwrap_or(firepbt::curve::OverlapSections { r: 0, s: 0, n: 0 });
        *out = FpComparison {
            score_diff: cmp.score_diff,
            has_overlap: cmp.overlap.is_some(),
            r: ov.r,
            s: ov.s,
            n: ov.n,
            used_penalization: cmp.used_penalization,
            p_value: cmp.p_value.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// One-sided p-value that `a` lies above `b`. Writes NaN and sets
/// `*out_has_overlap` to false when the curves do not overlap.
///
/// # Safety
/// `a` and `b` must be live handles; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_binom_test_curves(
    a: *const FpCurve,
    b: *const FpCurve,
    out_p: *mut f64,
    out_has_overlap: *mut bool,
) -> FpStatus {
    guard(|| {
        let (a, b) = (curve_ref(a, "a")?, curve_ref(b, "b")?);
        let out_p = out_p.as_mut().ok_or_else(|| null("out_p"))?;
        let out_has = out_has_overlap.as_mut().ok_or_else(|| null("out_has_overlap"))?;
        if a.is_empty() || b.is_empty() {
            return Err((FpStatus::DegenerateInput, "cannot compare an empty curve".into()));
        }
        let p = binom_test_curves(a, b);
        *out_has = p.is_some();
        *out_p = p.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_exact_binomial_tail(k: u64, n: u64, out: *mut f64) -> FpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = exact_binomial_tail(k, n).map_err(|e| (FpStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Runs an experiment from a JSON config. `threads` = 0 uses the default pool
/// size; results do not depend on it.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_run_experiment(config_json: *const c_char, threads: u32, out_run: *mut *mut FpRun) -> FpStatus {
    guard(|| {
        let out = out_run.as_mut().ok_or_else(|| null("out_run"))?;
        *out = ptr::null_mut();
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (FpStatus::Utf8, e.to_string()))?;
        let cfg = ExperimentConfig::from_json(text).map_err(|e| (FpStatus::Config, e.to_string()))?;
        let log = run_experiment(&cfg, &RunOptions { threads: threads as usize })
            .map_err(|f| (FpStatus::Runtime, f.error.to_string()))?;
        let report = build_report(&log).map_err(|e| (FpStatus::Runtime, e.to_string()))?;
        let report = serde_json::to_string(&report).map_err(|e| (FpStatus::Runtime, e.to_string()))?;
        let to_c = |s: String| CString::new(s).map_err(|e| (FpStatus::Runtime, e.to_string()));
        *out = Box::into_raw(Box::new(FpRun {
            events: to_c(log.to_jsonl())?,
            report: to_c(report)?,
        }));
        Ok(())
    })
}

/// The run's event log as JSON lines, or null for a null handle.
///
/// # Safety
/// `run` must be null or a live handle from [`fp_run_experiment`].
#[no_mangle]
pub unsafe extern "C" fn fp_run_events_jsonl(run: *const FpRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.events.as_ptr())
}

/// The run's report as a JSON object, or null for a null handle.
///
/// # Safety
/// `run` must be null or a live handle from [`fp_run_experiment`].
#[no_mangle]
pub unsafe extern "C" fn fp_run_report_json(run: *const FpRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.report.as_ptr())
}

/// # Safety
/// `run` must be null or a handle from [`fp_run_experiment`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_run_free(run: *mut FpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
