//! C ABI over the trace, DCFG, slicing and trigger APIs.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible function returns a
//! [`DclStatus`]; on failure `dcl_last_error` describes the cause. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dyncode_lens::dcfg::{build_dcfg, Dcfg};
use dyncode_lens::error::{SliceError, TaintError, TraceError};
use dyncode_lens::slicer::{backward_slice, SliceCriterion};
use dyncode_lens::trace::{read_trace, Trace};
use dyncode_lens::trigger::{detect_triggers, TaintPolicy};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DclStatus {
    Ok = 0,
    NullArgument = 1,
    Io = 2,
    Parse = 3,
    Validation = 4,
    OutOfRange = 5,
    Analysis = 6,
    NoSources = 7,
    InvalidArgument = 8,
    Panic = 9,
}

/// Taint propagation policy for `dcl_trigger_count`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DclPolicy {
    DataOnly = 0,
    DataAndControl = 1,
}

/// A loaded trace.
pub struct DclTrace {
    trace: Trace,
}

/// A dynamic CFG built from a trace.
pub struct DclDcfg {
    dcfg: Dcfg,
    trace_len: usize,
}

/// DCFG size metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DclDcfgStats {
    pub n_instrs: usize,
    pub n_blocks: usize,
    pub n_edges: usize,
    pub n_phases: usize,
    pub n_dyn_edges: usize,
    pub blocks_unshared: usize,
    pub blocks_shared: usize,
    pub shared_savings: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DclStatus, msg: impl Into<String>) -> DclStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> DclStatus) -> DclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == DclStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(DclStatus::Panic, "internal panic"),
    }
}

fn trace_status(e: &TraceError) -> DclStatus {
    match e {
        TraceError::Io(_) => DclStatus::Io,
        TraceError::Parse { .. } | TraceError::Encode(_) => DclStatus::Parse,
        TraceError::Validation { .. } => DclStatus::Validation,
    }
}

fn load(result: Result<Trace, TraceError>, out: *mut *mut DclTrace) -> DclStatus {
    match result {
        Ok(trace) => {
            // SAFETY: callers checked `out` for null.
            unsafe { *out = Box::into_raw(Box::new(DclTrace { trace })) };
            DclStatus::Ok
        }
        Err(e) => fail(trace_status(&e), e.to_string()),
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn dcl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Reads a JSONL trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcl_trace_read_file(path: *const c_char, out: *mut *mut DclTrace) -> DclStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(DclStatus::NullArgument, "null argument");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(DclStatus::InvalidArgument, "path is not UTF-8");
        };
        match File::open(path) {
            Ok(f) => load(read_trace(BufReader::new(f)), out),
            Err(e) => fail(DclStatus::Io, format!("{path}: {e}")),
        }
    })
}

/// Parses a JSONL trace from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcl_trace_read_buffer(
    data: *const u8,
    len: usize,
    out: *mut *mut DclTrace,
) -> DclStatus {
    guard(|| {
        if (data.is_null() && len > 0) || out.is_null() {
            return fail(DclStatus::NullArgument, "null argument");
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        load(read_trace(bytes), out)
    })
}

/// Number of records, or 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcl_trace_len(trace: *const DclTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.len())
}

/// # Safety
/// `trace` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcl_trace_free(trace: *mut DclTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Builds the DCFG of `trace`.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcl_dcfg_build(
    trace: *const DclTrace,
    shared: bool,
    out: *mut *mut DclDcfg,
) -> DclStatus {
    guard(|| {
        let (Some(t), false) = (trace.as_ref(), out.is_null()) else {
            return fail(DclStatus::NullArgument, "null argument");
        };
        match build_dcfg(&t.trace, shared) {
            Ok(dcfg) => {
                *out = Box::into_raw(Box::new(DclDcfg { dcfg, trace_len: t.trace.len() }));
                DclStatus::Ok
            }
            Err(e) => fail(DclStatus::Analysis, e.to_string()),
        }
    })
}

/// # Safety
/// `dcfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcl_dcfg_stats(dcfg: *const DclDcfg, out: *mut DclDcfgStats) -> DclStatus {
    guard(|| {
        let (Some(d), false) = (dcfg.as_ref(), out.is_null()) else {
            return fail(DclStatus::NullArgument, "null argument");
        };
        let s = d.dcfg.stats();
        *out = DclDcfgStats {
            n_instrs: s.n_instrs,
            n_blocks: s.n_blocks,
            n_edges: s.n_edges,
            n_phases: s.n_phases,
            n_dyn_edges: s.n_dyn_edges,
            blocks_unshared: s.blocks_unshared,
            blocks_shared: s.blocks_shared,
            shared_savings: s.shared_savings,
        };
        DclStatus::Ok
    })
}

/// Number of phases, or 0 for NULL.
///
/// # Safety
/// `dcfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcl_dcfg_phase_count(dcfg: *const DclDcfg) -> usize {
    dcfg.as_ref().map_or(0, |d| d.dcfg.phase_count())
}

/// # Safety
/// `dcfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcl_dcfg_free(dcfg: *mut DclDcfg) {
    if !dcfg.is_null() {
        drop(Box::from_raw(dcfg));
    }
}

unsafe fn pair<'a>(
    trace: *const DclTrace,
    dcfg: *const DclDcfg,
) -> Result<(&'a Trace, &'a Dcfg), DclStatus> {
    let (Some(t), Some(d)) = (trace.as_ref(), dcfg.as_ref()) else {
        return Err(fail(DclStatus::NullArgument, "null argument"));
    };
    if d.trace_len != t.trace.len() {
        return Err(fail(DclStatus::InvalidArgument, "DCFG was built from a different trace"));
    }
    Ok((&t.trace, &d.dcfg))
}

/// Backward slice from position `pos` with the default criterion. On
/// success `*positions` receives an ascending array of `*len` trace
/// positions, released with `dcl_positions_free`.
///
/// # Safety
/// Handles must be live; `positions` and `len` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dcl_slice(
    trace: *const DclTrace,
    dcfg: *const DclDcfg,
    pos: usize,
    use_codegen: bool,
    positions: *mut *mut usize,
    len: *mut usize,
) -> DclStatus {
    guard(|| {
        if positions.is_null() || len.is_null() {
            return fail(DclStatus::NullArgument, "null argument");
        }
        let (t, d) = match pair(trace, dcfg) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match backward_slice(t, d, &SliceCriterion::at(pos), use_codegen) {
            Ok(r) => {
                let boxed = r.positions.into_boxed_slice();
                *len = boxed.len();
                *positions = Box::into_raw(boxed) as *mut usize;
                DclStatus::Ok
            }
            Err(e @ SliceError::OutOfRange { .. }) => fail(DclStatus::OutOfRange, e.to_string()),
            Err(e) => fail(DclStatus::Analysis, e.to_string()),
        }
    })
}

/// Releases an array returned by `dcl_slice`.
///
/// # Safety
/// `positions` and `len` must come from one successful `dcl_slice` call.
#[no_mangle]
pub unsafe extern "C" fn dcl_positions_free(positions: *mut usize, len: usize) {
    if !positions.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(positions, len)));
    }
}

/// Number of trigger findings using the trace's taint-source records.
///
/// # Safety
/// Handles must be live and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcl_trigger_count(
    trace: *const DclTrace,
    dcfg: *const DclDcfg,
    policy: DclPolicy,
    count: *mut usize,
) -> DclStatus {
    guard(|| {
        if count.is_null() {
            return fail(DclStatus::NullArgument, "null argument");
        }
        let (t, d) = match pair(trace, dcfg) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let policy = match policy {
            DclPolicy::DataOnly => TaintPolicy::DataOnly,
            DclPolicy::DataAndControl => TaintPolicy::DataAndControl,
        };
        match detect_triggers(t, d, policy, None) {
            Ok(r) => {
                *count = r.findings.len();
                DclStatus::Ok
            }
            Err(e @ TaintError::NoSources) => fail(DclStatus::NoSources, e.to_string()),
            Err(e) => fail(DclStatus::Analysis, e.to_string()),
        }
    })
}
