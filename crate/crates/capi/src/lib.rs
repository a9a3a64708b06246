//! C ABI over the PS-selection pipeline.
//!
//! Every function returns a [`PsnetStatus`]; results come back through out
//! pointers. Objects are opaque handles owned by this library and released
//! with their `_free` function. `psnet_last_error_message` returns a
//! thread-local description of the most recent failure. No function
//! unwinds across the boundary.

use psnet::classical::{run_classical, ClassicalConfig};
use psnet::networks::{checkpoint, predict_full, Network};
use psnet::quality::{build_report, StipConfig};
use psnet::stack::format::{read_mask, read_stack, write_mask, write_stack};
use psnet::stack::{try_wrap, InterferogramStack, PixelMask};
use psnet::synth::{generate, SceneConfig, SceneTruth};
use psnet::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Status codes returned by every entry point.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsnetStatus {
    Ok = 0,
    InvalidArgument = 1,
    FormatError = 2,
    IoError = 3,
    EmptyResult = 4,
    NumericalError = 5,
    NullPointer = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> PsnetStatus {
    match err {
        Error::InvalidArgument(_) => PsnetStatus::InvalidArgument,
        Error::Format(_) => PsnetStatus::FormatError,
        Error::Io(_) => PsnetStatus::IoError,
        Error::Json(_) => PsnetStatus::FormatError,
        Error::EmptyResult(_) => PsnetStatus::EmptyResult,
        Error::Numerical(_) => PsnetStatus::NumericalError,
    }
}

fn fail(err: Error) -> PsnetStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Runs a fallible body, converting errors and panics to status codes.
fn guarded(body: impl FnOnce() -> Result<PsnetStatus, Error>) -> PsnetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => fail(err),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            PsnetStatus::Panic
        }
    }
}

unsafe fn cstr_arg(ptr: *const c_char, what: &str) -> Result<String, Error> {
    if ptr.is_null() {
        return Err(Error::invalid(format!("{what}: null pointer")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(|s| s.to_string())
        .map_err(|_| Error::invalid(format!("{what}: not valid UTF-8")))
}

macro_rules! out_ptr {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            set_error(concat!($what, ": null out pointer"));
            return PsnetStatus::NullPointer;
        }
    };
}

/// Opaque interferogram stack handle.
pub struct PsnetStack(InterferogramStack);
/// Opaque PS mask handle.
pub struct PsnetMask(PixelMask);
/// Opaque trained-network handle.
pub struct PsnetNetwork(Network);
/// Opaque scene-truth handle (land cover, per-pixel noise levels, DEM
/// error and the true mask).
pub struct PsnetTruth(SceneTruth);

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Human-readable name of a status code (static storage).
#[no_mangle]
pub extern "C" fn psnet_status_name(status: i32) -> *const c_char {
    let name: &'static str = match status {
        0 => "ok\0",
        1 => "invalid_argument\0",
        2 => "format_error\0",
        3 => "io_error\0",
        4 => "empty_result\0",
        5 => "numerical_error\0",
        6 => "null_pointer\0",
        7 => "panic\0",
        _ => "unknown\0",
    };
    name.as_ptr() as *const c_char
}

/// Message of the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn psnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Wrap an angle to (−π, π]. NaN input yields NaN.
#[no_mangle]
pub extern "C" fn psnet_wrap(angle: f64) -> f64 {
    try_wrap(angle).unwrap_or(f64::NAN)
}

// ---- stack ----------------------------------------------------------

/// Read an IFGSTACK1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn psnet_stack_read(
    path: *const c_char,
    out: *mut *mut PsnetStack,
) -> PsnetStatus {
    out_ptr!(out, "stack_read");
    guarded(|| {
        let path = PathBuf::from(cstr_arg(path, "stack_read path")?);
        let stack = read_stack(&path)?;
        *out = Box::into_raw(Box::new(PsnetStack(stack)));
        Ok(PsnetStatus::Ok)
    })
}

/// Write a stack as IFGSTACK1.
///
/// # Safety
/// `stack` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn psnet_stack_write(
    stack: *const PsnetStack,
    path: *const c_char,
) -> PsnetStatus {
    out_ptr!(stack, "stack_write");
    guarded(|| {
        let path = PathBuf::from(cstr_arg(path, "stack_write path")?);
        write_stack(&(*stack).0, &path)?;
        Ok(PsnetStatus::Ok)
    })
}

/// Stack extent: width, height, interferogram count. Null out-params are
/// skipped.
///
/// # Safety
/// `stack` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn psnet_stack_dims(
    stack: *const PsnetStack,
    width: *mut usize,
    height: *mut usize,
    n_ifgs: *mut usize,
) -> PsnetStatus {
    out_ptr!(stack, "stack_dims");
    let s = &(*stack).0;
    if !width.is_null() {
        *width = s.width();
    }
    if !height.is_null() {
        *height = s.height();
    }
    if !n_ifgs.is_null() {
        *n_ifgs = s.n_ifgs();
    }
    PsnetStatus::Ok
}

/// # Safety
/// `stack` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn psnet_stack_free(stack: *mut PsnetStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

// ---- synthetic scenes ------------------------------------------------

/// Generate a synthetic truth-labelled scene from a JSON scene config
/// (all fields optional). `out_truth` may be null when only the stack is
/// needed.
///
/// # Safety
/// `config_json` must be NUL-terminated; out pointers valid or null as
/// documented.
#[no_mangle]
pub unsafe extern "C" fn psnet_scene_generate(
    config_json: *const c_char,
    out_stack: *mut *mut PsnetStack,
    out_truth: *mut *mut PsnetTruth,
) -> PsnetStatus {
    out_ptr!(out_stack, "scene_generate");
    guarded(|| {
        let body = cstr_arg(config_json, "scene config")?;
        let config: SceneConfig =
            serde_json::from_str(&body).map_err(|e| Error::invalid(format!("scene config: {e}")))?;
        let (stack, truth) = generate(&config)?;
        *out_stack = Box::into_raw(Box::new(PsnetStack(stack)));
        if !out_truth.is_null() {
            *out_truth = Box::into_raw(Box::new(PsnetTruth(truth)));
        }
        Ok(PsnetStatus::Ok)
    })
}

/// True PS mask of a generated scene.
///
/// # Safety
/// `truth` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_truth_mask(
    truth: *const PsnetTruth,
    out: *mut *mut PsnetMask,
) -> PsnetStatus {
    out_ptr!(truth, "truth_mask");
    out_ptr!(out, "truth_mask");
    *out = Box::into_raw(Box::new(PsnetMask((*truth).0.ps_mask.clone())));
    PsnetStatus::Ok
}

/// # Safety
/// `truth` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn psnet_truth_free(truth: *mut PsnetTruth) {
    if !truth.is_null() {
        drop(Box::from_raw(truth));
    }
}

// ---- masks ------------------------------------------------------------

/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_read(
    path: *const c_char,
    out: *mut *mut PsnetMask,
) -> PsnetStatus {
    out_ptr!(out, "mask_read");
    guarded(|| {
        let path = PathBuf::from(cstr_arg(path, "mask_read path")?);
        *out = Box::into_raw(Box::new(PsnetMask(read_mask(&path)?)));
        Ok(PsnetStatus::Ok)
    })
}

/// # Safety
/// `mask` live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_write(
    mask: *const PsnetMask,
    path: *const c_char,
) -> PsnetStatus {
    out_ptr!(mask, "mask_write");
    guarded(|| {
        let path = PathBuf::from(cstr_arg(path, "mask_write path")?);
        write_mask(&(*mask).0, &path)?;
        Ok(PsnetStatus::Ok)
    })
}

/// # Safety
/// `mask` live handle; null out-params skipped.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_dims(
    mask: *const PsnetMask,
    width: *mut usize,
    height: *mut usize,
) -> PsnetStatus {
    out_ptr!(mask, "mask_dims");
    if !width.is_null() {
        *width = (*mask).0.width();
    }
    if !height.is_null() {
        *height = (*mask).0.height();
    }
    PsnetStatus::Ok
}

/// Number of PS pixels.
///
/// # Safety
/// `mask` live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_count(mask: *const PsnetMask, out: *mut usize) -> PsnetStatus {
    out_ptr!(mask, "mask_count");
    out_ptr!(out, "mask_count");
    *out = (*mask).0.count();
    PsnetStatus::Ok
}

/// Copy the 0/1 labels row-major into `buf` (length `len` must equal
/// width × height).
///
/// # Safety
/// `mask` live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_copy_labels(
    mask: *const PsnetMask,
    buf: *mut u8,
    len: usize,
) -> PsnetStatus {
    out_ptr!(mask, "mask_copy_labels");
    out_ptr!(buf, "mask_copy_labels");
    let labels = (*mask).0.labels();
    if len != labels.len() {
        set_error("mask_copy_labels: buffer length mismatch");
        return PsnetStatus::InvalidArgument;
    }
    for (i, &b) in labels.iter().enumerate() {
        *buf.add(i) = b as u8;
    }
    PsnetStatus::Ok
}

/// # Safety
/// `mask` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn psnet_mask_free(mask: *mut PsnetMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

// ---- classical selection ----------------------------------------------

/// Run the classical phase-stability selection. `config_json` may be null
/// for defaults. Returns `EmptyResult` (with an all-false mask in `out`)
/// when no pixel passes the amplitude-dispersion gate.
///
/// # Safety
/// `stack` live handle; `config_json` NUL-terminated or null; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_classical_run(
    stack: *const PsnetStack,
    config_json: *const c_char,
    out: *mut *mut PsnetMask,
) -> PsnetStatus {
    out_ptr!(stack, "classical_run");
    out_ptr!(out, "classical_run");
    guarded(|| {
        let config: ClassicalConfig = if config_json.is_null() {
            ClassicalConfig::default()
        } else {
            let body = cstr_arg(config_json, "classical config")?;
            serde_json::from_str(&body)
                .map_err(|e| Error::invalid(format!("classical config: {e}")))?
        };
        let outcome = run_classical(&(*stack).0, &config)?;
        let empty = outcome.records.is_empty();
        *out = Box::into_raw(Box::new(PsnetMask(outcome.mask)));
        if empty {
            set_error("classical: no candidates passed the amplitude-dispersion gate");
            Ok(PsnetStatus::EmptyResult)
        } else {
            Ok(PsnetStatus::Ok)
        }
    })
}

// ---- networks -----------------------------------------------------------

/// Load a PSNET1 checkpoint.
///
/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_network_load(
    path: *const c_char,
    out: *mut *mut PsnetNetwork,
) -> PsnetStatus {
    out_ptr!(out, "network_load");
    guarded(|| {
        let path = PathBuf::from(cstr_arg(path, "network_load path")?);
        let (network, _) = checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(PsnetNetwork(network)));
        Ok(PsnetStatus::Ok)
    })
}

/// # Safety
/// `network` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn psnet_network_free(network: *mut PsnetNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Predict a PS mask over a full stack (chunk → forward → stitch). When
/// `prob_out` is non-null it must hold width × height doubles and receives
/// the stitched probability map.
///
/// # Safety
/// Handles must be live; `prob_out` null or sized as documented.
#[no_mangle]
pub unsafe extern "C" fn psnet_predict(
    network: *const PsnetNetwork,
    stack: *const PsnetStack,
    out_mask: *mut *mut PsnetMask,
    prob_out: *mut f64,
    prob_len: usize,
) -> PsnetStatus {
    out_ptr!(network, "predict");
    out_ptr!(stack, "predict");
    out_ptr!(out_mask, "predict");
    guarded(|| {
        let s = &(*stack).0;
        if !prob_out.is_null() && prob_len != s.width() * s.height() {
            return Err(Error::invalid("predict: prob buffer length mismatch"));
        }
        let (prob, mask) = predict_full(&(*network).0, s)?;
        if !prob_out.is_null() {
            std::ptr::copy_nonoverlapping(prob.data().as_ptr(), prob_out, prob_len);
        }
        *out_mask = Box::into_raw(Box::new(PsnetMask(mask)));
        Ok(PsnetStatus::Ok)
    })
}

// ---- evaluation -----------------------------------------------------------

/// STIP count of one pixel with the default 5×25 window and 0.8 threshold.
///
/// # Safety
/// `stack` live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_stip_count(
    stack: *const PsnetStack,
    row: usize,
    col: usize,
    out: *mut usize,
) -> PsnetStatus {
    out_ptr!(stack, "stip_count");
    out_ptr!(out, "stip_count");
    guarded(|| {
        *out = psnet::quality::stip_count(&(*stack).0, (row, col), &StipConfig::default())?;
        Ok(PsnetStatus::Ok)
    })
}

/// Comparison report over masks (overlaps, truth metrics when `truth` is
/// non-null, STIP reliability), serialized as JSON. Free the string with
/// `psnet_string_free`.
///
/// # Safety
/// `masks` must point to `n_masks` live mask handles; other handles live;
/// `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn psnet_eval_report_json(
    stack: *const PsnetStack,
    masks: *const *const PsnetMask,
    n_masks: usize,
    truth: *const PsnetMask,
    out_json: *mut *mut c_char,
) -> PsnetStatus {
    out_ptr!(stack, "eval_report");
    out_ptr!(masks, "eval_report");
    out_ptr!(out_json, "eval_report");
    guarded(|| {
        let mut refs: Vec<&PixelMask> = Vec::with_capacity(n_masks);
        for i in 0..n_masks {
            let m = *masks.add(i);
            if m.is_null() {
                return Err(Error::invalid("eval_report: null mask in list"));
            }
            refs.push(&(*m).0);
        }
        let truth_ref = if truth.is_null() { None } else { Some(&(*truth).0) };
        let report =
            build_report(&(*stack).0, &refs, None, truth_ref, &StipConfig::default())?;
        let body = serde_json::to_string_pretty(&report)
            .map_err(Error::from)?
            .replace('\0', " ");
        *out_json = CString::new(body).expect("NUL stripped").into_raw();
        Ok(PsnetStatus::Ok)
    })
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn psnet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
