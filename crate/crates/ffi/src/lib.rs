//! C ABI for the dyadrank engine. Handles are opaque, results are integer
//! codes, and prose for the last failure on the current thread is available
//! through `dr_last_error_message`. The generated header lives in
//! `include/dyadrank.h` and is refreshed on every build.
//!
//! Pointer conventions: `const char*` arguments are NUL-terminated UTF-8,
//! array arguments carry an explicit length, and out-parameters are written
//! only when the call returns `DR_OK`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dyadrank::config;
use dyadrank::metrics::{self, MetricsFrame};
use dyadrank::runner::{self, TrainSummary};
use dyadrank::Error;

/// Success.
pub const DR_OK: c_int = 0;
/// A required pointer argument was null.
pub const DR_ERR_NULL_ARG: c_int = -1;
/// A string argument was not valid UTF-8.
pub const DR_ERR_UTF8: c_int = -2;
/// The config or input was rejected before any work ran.
pub const DR_ERR_CONFIG: c_int = -3;
/// The run itself failed; see dr_last_error_message().
pub const DR_ERR_RUNTIME: c_int = -4;
/// An index was out of range for the handle it was applied to.
pub const DR_ERR_BOUNDS: c_int = -5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn fail(code: c_int, msg: &str) -> c_int {
    set_error(msg);
    code
}

fn fail_with(e: &Error) -> c_int {
    // Setup problems (bad config, missing files) and runtime failures carry
    // the same split the CLI exposes through its exit codes.
    let code = if e.exit_code() == 2 { DR_ERR_CONFIG } else { DR_ERR_RUNTIME };
    fail(code, &e.to_string())
}

/// Runs engine work behind a panic barrier: unwinding across the C boundary
/// would abort the host process.
fn guarded(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail(DR_ERR_RUNTIME, "internal panic"),
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        return Err(DR_ERR_NULL_ARG);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| DR_ERR_UTF8)
}

/// Engine version as a static NUL-terminated string. Never null, never freed.
#[no_mangle]
pub extern "C" fn dr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Prose for the current thread's most recent failure, empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn metric_call(
    preds: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
    f: impl Fn(&[f64], &[u8]) -> dyadrank::Result<f64>,
) -> c_int {
    if preds.is_null() || labels.is_null() || out.is_null() {
        return fail(DR_ERR_NULL_ARG, "null argument");
    }
    let preds = std::slice::from_raw_parts(preds, len);
    let labels = std::slice::from_raw_parts(labels, len);
    match f(preds, labels) {
        Ok(v) => {
            *out = v;
            DR_OK
        }
        Err(e) => fail_with(&e),
    }
}

/// Normalized cross entropy of `len` predictions against binary labels,
/// written to `out`. Fails if labels are one-class or predictions are not
/// probabilities.
///
/// # Safety
/// `preds` and `labels` must point to `len` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dr_nce(
    preds: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> c_int {
    metric_call(preds, labels, len, out, |p, l| metrics::nce(p, l))
}

/// ROC AUC of `len` predictions against binary labels, written to `out`.
/// Tied predictions count half.
///
/// # Safety
/// `preds` and `labels` must point to `len` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dr_auc(
    preds: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> c_int {
    metric_call(preds, labels, len, out, |p, l| metrics::auc(p, l))
}

/// Generates a synthetic interaction log from generator config TOML text and
/// writes events.bin, meta.json, truth.json (and probe.bin when configured)
/// under `out_dir`. The event count is written to `events_out` when non-null.
///
/// # Safety
/// `config_toml` and `out_dir` must be NUL-terminated; `events_out` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn dr_generate_synthetic(
    config_toml: *const c_char,
    out_dir: *const c_char,
    events_out: *mut u64,
) -> c_int {
    let toml = match cstr_arg(config_toml) {
        Ok(s) => s,
        Err(code) => return fail(code, "config_toml"),
    };
    let dir = match cstr_arg(out_dir) {
        Ok(s) => PathBuf::from(s),
        Err(code) => return fail(code, "out_dir"),
    };
    guarded(move || {
        let spec = match config::synthetic_spec_from_str(toml) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        match runner::ingest_synthetic(&spec, &dir) {
            Ok((events, _, _)) => {
                if !events_out.is_null() {
                    *events_out = events.len() as u64;
                }
                DR_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Runs a training spec given as TOML text; artifacts land in the spec's
/// output directory exactly as with the command-line `train`. When
/// `frames_out` is non-null it receives the number of metric frames produced
/// (0 for a static run, which writes outcome.json instead).
///
/// # Safety
/// `spec_toml` must be NUL-terminated; `frames_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn dr_run_train(spec_toml: *const c_char, frames_out: *mut u64) -> c_int {
    let toml = match cstr_arg(spec_toml) {
        Ok(s) => s,
        Err(code) => return fail(code, "spec_toml"),
    };
    guarded(move || {
        let spec = match config::train_spec_from_str(toml) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        match runner::run_train_spec(&spec) {
            Ok(summary) => {
                if !frames_out.is_null() {
                    *frames_out = match &summary {
                        TrainSummary::Recurrent(o) => o.frames.len() as u64,
                        TrainSummary::Static(_) => 0,
                    };
                }
                DR_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Loaded metric frames, opaque to the host. Free with dr_frames_free.
pub struct DrFrames {
    frames: Vec<MetricsFrame>,
}

/// One frame flattened to plain scalars. Absent values use sentinels:
/// `eval_day` 0 means the frame was never evaluated, NaN means the metric
/// had no value, and -1 means the embedding side is not part of the model.
#[repr(C)]
pub struct DrFrameView {
    /// 1-based index of the last day trained into this frame.
    pub day: u32,
    /// 1-based day whose head was scored, 0 when the frame has no eval.
    pub eval_day: u32,
    pub eval_examples: u64,
    /// Mean NCE across tasks, NaN when absent. Lower is better, 1 matches
    /// always predicting the base rate.
    pub mean_nce: f64,
    /// Mean ROC AUC across tasks, NaN when absent.
    pub mean_auc: f64,
    /// Share of positive labels in the evaluated head, NaN when absent.
    pub positive_rate: f64,
    /// Touched item-side embedding parameters, -1 when the side is absent.
    pub item_active_params: i64,
    /// Distinct raw item IDs hashed into the table, -1 when absent.
    pub item_distinct_ids: i64,
    /// Touched user-side embedding parameters, -1 when the side is absent.
    pub user_active_params: i64,
    /// Distinct raw user IDs hashed into the table, -1 when absent.
    pub user_distinct_ids: i64,
}

/// Loads a frames.jsonl file produced by a recurrent run. Returns null on
/// failure (message via dr_last_error_message).
///
/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dr_frames_load(path: *const c_char) -> *mut DrFrames {
    let path = match cstr_arg(path) {
        Ok(s) => PathBuf::from(s),
        Err(code) => {
            fail(code, "path");
            return std::ptr::null_mut();
        }
    };
    match metrics::read_frames(&path) {
        Ok(frames) => Box::into_raw(Box::new(DrFrames { frames })),
        Err(e) => {
            fail_with(&e);
            std::ptr::null_mut()
        }
    }
}

/// Number of frames in the handle; 0 for null.
///
/// # Safety
/// `handle` must be null or a pointer from dr_frames_load.
#[no_mangle]
pub unsafe extern "C" fn dr_frames_count(handle: *const DrFrames) -> usize {
    if handle.is_null() {
        0
    } else {
        (*handle).frames.len()
    }
}

/// Copies frame `index` into `view`.
///
/// # Safety
/// `handle` must come from dr_frames_load and `view` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dr_frames_get(
    handle: *const DrFrames,
    index: usize,
    view: *mut DrFrameView,
) -> c_int {
    if handle.is_null() || view.is_null() {
        return fail(DR_ERR_NULL_ARG, "null argument");
    }
    let frames = &(*handle).frames;
    let Some(f) = frames.get(index) else {
        return fail(DR_ERR_BOUNDS, &format!("index {index} >= {}", frames.len()));
    };
    let growth = |g: Option<dyadrank::embeddings::GrowthReport>| match g {
        Some(g) => (g.active_params as i64, g.distinct_raw_ids as i64),
        None => (-1, -1),
    };
    let (item_active_params, item_distinct_ids) = growth(f.item_growth);
    let (user_active_params, user_distinct_ids) = growth(f.user_growth);
    *view = DrFrameView {
        day: f.day,
        eval_day: f.eval_day.unwrap_or(0),
        eval_examples: f.eval_examples,
        mean_nce: f.mean_nce().unwrap_or(f64::NAN),
        mean_auc: f.mean_auc().unwrap_or(f64::NAN),
        positive_rate: f.positive_rate.unwrap_or(f64::NAN),
        item_active_params,
        item_distinct_ids,
        user_active_params,
        user_distinct_ids,
    };
    DR_OK
}

/// Frees a handle from dr_frames_load. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer from dr_frames_load, freed once.
#[no_mangle]
pub unsafe extern "C" fn dr_frames_free(handle: *mut DrFrames) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
