//! C ABI over trained checkpoints: load a model, score candidates, and
//! rank the catalog from foreign code. Handles are opaque; every call
//! reports an `HgnnStatus` and leaves a message for `hgnn_last_error` on
//! failure.
//!
//! The generated header lands in `include/hgnn.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use hgnn_core::model::{encode, score_all, score_candidate, AblationFlags, ForwardOpts, ModelParams};
use hgnn_core::model::checkpoint;
use hgnn_core::tsg::SECONDS_PER_DAY;
use hgnn_core::Error;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgnnStatus {
    Ok = 0,
    /// A required pointer was null or a length was zero.
    NullArgument = 1,
    /// Invalid hyperparameter or option value.
    Config = 2,
    /// Malformed checkpoint or out-of-range index.
    Data = 3,
    Io = 4,
    Numerical = 5,
}

/// Inference-time ablation switches, OR-able into the `flags` arguments.
pub const HGNN_FLAG_NO_GAT1: u32 = 1;
pub const HGNN_FLAG_NO_GAT2: u32 = 2;
pub const HGNN_FLAG_NO_TIMESPAN: u32 = 4;

const FLAG_MASK: u32 = HGNN_FLAG_NO_GAT1 | HGNN_FLAG_NO_GAT2 | HGNN_FLAG_NO_TIMESPAN;

/// Opaque trained model handle.
pub struct HgnnModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> HgnnStatus {
    match err {
        Error::Config(_) => HgnnStatus::Config,
        Error::Data(_) => HgnnStatus::Data,
        Error::Io(_) => HgnnStatus::Io,
        Error::Numerical(_) => HgnnStatus::Numerical,
    }
}

fn fail(err: &Error) -> HgnnStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn fail_null(what: &str) -> HgnnStatus {
    set_error(&format!("{what} must not be null"));
    HgnnStatus::NullArgument
}

fn parse_flags(flags: u32) -> Result<AblationFlags, HgnnStatus> {
    if flags & !FLAG_MASK != 0 {
        set_error(&format!("unknown flag bits 0x{:x}", flags & !FLAG_MASK));
        return Err(HgnnStatus::Config);
    }
    Ok(AblationFlags {
        no_gat1: flags & HGNN_FLAG_NO_GAT1 != 0,
        no_gat2: flags & HGNN_FLAG_NO_GAT2 != 0,
        no_timespan: flags & HGNN_FLAG_NO_TIMESPAN != 0,
        no_entropy: false,
    })
}

fn make_opts(t_bound_days: f64, flags: u32) -> Result<ForwardOpts, HgnnStatus> {
    if !(t_bound_days > 0.0) || !t_bound_days.is_finite() {
        set_error(&format!(
            "edge-issue bound must be a positive number of days, got {t_bound_days}"
        ));
        return Err(HgnnStatus::Config);
    }
    Ok(ForwardOpts {
        t_bound: t_bound_days * SECONDS_PER_DAY,
        flags: parse_flags(flags)?,
    })
}

/// Gathers the window arrays after the usual null and length checks.
unsafe fn window<'a>(
    items: *const u64,
    times: *const i64,
    len: usize,
) -> Result<(Vec<usize>, &'a [i64]), HgnnStatus> {
    if items.is_null() {
        return Err(fail_null("items"));
    }
    if times.is_null() {
        return Err(fail_null("times"));
    }
    if len == 0 {
        set_error("window length must be at least 1");
        return Err(HgnnStatus::NullArgument);
    }
    let items = unsafe { std::slice::from_raw_parts(items, len) };
    let times = unsafe { std::slice::from_raw_parts(times, len) };
    Ok((items.iter().map(|&v| v as usize).collect(), times))
}

/// Loads a checkpoint from `path` (NUL-terminated UTF-8) into a fresh
/// handle. On success the handle is owned by the caller and must be
/// released with `hgnn_model_free`.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out_model` to a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn hgnn_model_load(
    path: *const c_char,
    out_model: *mut *mut HgnnModel,
) -> HgnnStatus {
    if out_model.is_null() {
        return fail_null("out_model");
    }
    unsafe { *out_model = ptr::null_mut() };
    if path.is_null() {
        return fail_null("path");
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return HgnnStatus::Data;
        }
    };
    match checkpoint::load(Path::new(path)) {
        Ok(params) => {
            let model = Box::new(HgnnModel { params });
            unsafe { *out_model = Box::into_raw(model) };
            HgnnStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Releases a handle returned by `hgnn_model_load`. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by `hgnn_model_load`
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn hgnn_model_free(model: *mut HgnnModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of items in the model's catalog, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hgnn_model_vocab_size(model: *const HgnnModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.params.vocab_size() as u64
}

/// Writes the model's embedding width, head count, and factor count.
/// Null output slots are skipped.
///
/// # Safety
/// `model` must be a live handle; out pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn hgnn_model_dims(
    model: *const HgnnModel,
    out_d: *mut u64,
    out_heads: *mut u64,
    out_factors: *mut u64,
) -> HgnnStatus {
    if model.is_null() {
        return fail_null("model");
    }
    let hyper = unsafe { &*model }.params.hyper;
    unsafe {
        if !out_d.is_null() {
            *out_d = hyper.d as u64;
        }
        if !out_heads.is_null() {
            *out_heads = hyper.heads as u64;
        }
        if !out_factors.is_null() {
            *out_factors = hyper.factors as u64;
        }
    }
    HgnnStatus::Ok
}

/// Scores one candidate item against an interaction window.
///
/// `items`/`times` are parallel arrays of length `len` (item indices and
/// Unix seconds, chronological). The result in (0, 1) lands in
/// `out_score`.
///
/// # Safety
/// Array pointers must reference `len` readable elements; `out_score`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn hgnn_score(
    model: *const HgnnModel,
    items: *const u64,
    times: *const i64,
    len: usize,
    candidate: u64,
    candidate_time: i64,
    t_bound_days: f64,
    flags: u32,
    out_score: *mut f64,
) -> HgnnStatus {
    if model.is_null() {
        return fail_null("model");
    }
    if out_score.is_null() {
        return fail_null("out_score");
    }
    let (items, times) = match unsafe { window(items, times, len) } {
        Ok(w) => w,
        Err(status) => return status,
    };
    let opts = match make_opts(t_bound_days, flags) {
        Ok(o) => o,
        Err(status) => return status,
    };
    let params = &unsafe { &*model }.params;
    let enc = match encode(&items, times, params, &opts) {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    match score_candidate(&enc, candidate as usize, candidate_time, params, &opts) {
        Ok(trace) => {
            unsafe { *out_score = trace.y };
            HgnnStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Ranks the whole catalog for an interaction window and writes the top
/// `top_k` item indices and scores (descending score, ascending index on
/// ties). `out_count` receives the number written, which is the smaller
/// of `top_k` and the catalog size.
///
/// # Safety
/// `out_items` and `out_scores` must have room for `top_k` elements.
#[no_mangle]
pub unsafe extern "C" fn hgnn_recommend(
    model: *const HgnnModel,
    items: *const u64,
    times: *const i64,
    len: usize,
    now: i64,
    t_bound_days: f64,
    flags: u32,
    top_k: usize,
    out_items: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> HgnnStatus {
    if model.is_null() {
        return fail_null("model");
    }
    if out_items.is_null() || out_scores.is_null() || out_count.is_null() {
        return fail_null("output arrays");
    }
    if top_k == 0 {
        set_error("top_k must be at least 1");
        return HgnnStatus::NullArgument;
    }
    unsafe { *out_count = 0 };
    let (items, times) = match unsafe { window(items, times, len) } {
        Ok(w) => w,
        Err(status) => return status,
    };
    let opts = match make_opts(t_bound_days, flags) {
        Ok(o) => o,
        Err(status) => return status,
    };
    let params = &unsafe { &*model }.params;
    let enc = match encode(&items, times, params, &opts) {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    let scores = score_all(&enc, now, params, &opts);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let count = top_k.min(order.len());
    for (slot, &idx) in order[..count].iter().enumerate() {
        unsafe {
            *out_items.add(slot) = idx as u64;
            *out_scores.add(slot) = scores[idx];
        }
    }
    unsafe { *out_count = count };
    HgnnStatus::Ok
}

/// Message for the most recent failure on this thread; empty until the
/// first failure. The pointer stays valid until the next failing call on
/// the same thread.
#[no_mangle]
pub extern "C" fn hgnn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hgnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
