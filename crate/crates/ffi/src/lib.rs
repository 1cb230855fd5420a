//! C ABI over the vnfactor library.
//!
//! Every fallible call returns a [`VnStatus`]; on failure the message is available from
//! [`vn_last_error`] on the same thread. Results come back through opaque handles or
//! heap strings, released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use vnfactor::cli::{
    cmd_bounds, cmd_gen, cmd_halperin, cmd_star_equiv, cmd_stabilize, parse_shape, BoundsConfig, GenConfig, GenKind,
    HalperinTranscript, RunReport,
};
use vnfactor::halperin::chain::ChainConfig;
use vnfactor::scalar::rational_str;
use vnfactor::stabilize::k_constant;
use vnfactor::{Error, Field};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VnStatus {
    Ok = 0,
    InputError = 1,
    AssertionFailure = 2,
    Infeasible = 3,
    ConstructionFailure = 4,
    NullPointer = 5,
    Panic = 6,
}

/// A run report (bounds, stabilize or star-equiv).
pub struct VnReport(RunReport);

/// A chain transcript.
pub struct VnChain(HalperinTranscript);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> VnStatus {
    match e.exit_code() {
        2 => VnStatus::AssertionFailure,
        3 => VnStatus::Infeasible,
        4 => VnStatus::ConstructionFailure,
        _ => VnStatus::InputError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), VnStatus>) -> VnStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VnStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside vnfactor");
            VnStatus::Panic
        }
    }
}

fn fail(e: Error) -> VnStatus {
    set_error(&e.to_string());
    status_of(&e)
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, VnStatus> {
    if s.is_null() {
        set_error(&format!("{what} is null"));
        return Err(VnStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(&format!("{what} is not UTF-8"));
        VnStatus::InputError
    })
}

fn field(s: &str) -> Result<Field, VnStatus> {
    s.parse().map_err(fail)
}

fn to_c(s: String) -> Result<*mut c_char, VnStatus> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        set_error("output contains a NUL byte");
        VnStatus::ConstructionFailure
    })
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), VnStatus> {
    if out.is_null() {
        set_error("output pointer is null");
        return Err(VnStatus::NullPointer);
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_str(out: *mut *mut c_char, s: String) -> Result<(), VnStatus> {
    if out.is_null() {
        set_error("output pointer is null");
        return Err(VnStatus::NullPointer);
    }
    *out = to_c(s)?;
    Ok(())
}

/// Message of the last failed call on this thread; empty after a successful call.
/// The pointer stays valid until the next vnfactor call on this thread.
#[no_mangle]
pub extern "C" fn vn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// K(p) in decimal.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_k_constant(p: u32, out: *mut *mut c_char) -> VnStatus {
    guard(|| {
        if p == 0 {
            set_error("K(p) needs p ≥ 1");
            return Err(VnStatus::InputError);
        }
        put_str(out, k_constant(p as usize).to_string())
    })
}

/// Randomized bound campaigns. `field_name` is "q", "qi" or "gf:p"; `shape` lists block sizes, e.g. "2,3".
/// A negative `k_trials` uses `trials` for the stabilization campaigns.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_bounds(
    field_name: *const c_char,
    shape: *const c_char,
    trials: u64,
    k_trials: i64,
    seed: u64,
    out: *mut *mut VnReport,
) -> VnStatus {
    guard(|| {
        let cfg = BoundsConfig {
            field: field(text(field_name, "field")?)?,
            shape: parse_shape(text(shape, "shape")?).map_err(fail)?,
            trials,
            k_trials: u64::try_from(k_trials).ok(),
            seed,
        };
        put(out, VnReport(cmd_bounds(&cfg).map_err(fail)?))
    })
}

/// Stabilizes the matrix units of an instance given as JSON text.
///
/// # Safety
/// `instance_json` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_stabilize(instance_json: *const c_char, out: *mut *mut VnReport) -> VnStatus {
    guard(|| put(out, VnReport(cmd_stabilize(text(instance_json, "instance")?).map_err(fail)?)))
}

/// Decides *-equivalence for a projection pair given as JSON text.
///
/// # Safety
/// `pair_json` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_star_equiv(pair_json: *const c_char, out: *mut *mut VnReport) -> VnStatus {
    guard(|| put(out, VnReport(cmd_star_equiv(text(pair_json, "pair")?).map_err(fail)?)))
}

/// Generates an instance file. `kind` is "stabilization" or "pair".
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vn_gen(
    kind: *const c_char,
    field_name: *const c_char,
    p: u32,
    ambient: u32,
    budget: u32,
    noise: u32,
    star: bool,
    seed: u64,
    out: *mut *mut c_char,
) -> VnStatus {
    guard(|| {
        let kind = match text(kind, "kind")? {
            "stabilization" => GenKind::Stabilization,
            "pair" => GenKind::Pair,
            k => {
                set_error(&format!("unknown kind `{k}`"));
                return Err(VnStatus::InputError);
            }
        };
        let cfg = GenConfig {
            kind,
            field: field(text(field_name, "field")?)?,
            p: p as usize,
            ambient: ambient as usize,
            budget: budget as usize,
            noise: noise as usize,
            star,
            seed,
        };
        put_str(out, cmd_gen(&cfg).map_err(fail)?)
    })
}

/// Builds a finite-stage chain in M_n at θ given as "a/b".
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_halperin(
    field_name: *const c_char,
    theta: *const c_char,
    stages: u32,
    ambient: u64,
    seed: u64,
    out: *mut *mut VnChain,
) -> VnStatus {
    guard(|| {
        let theta = rational_str::parse(text(theta, "theta")?).map_err(fail)?;
        let mut cfg = ChainConfig::new(field(text(field_name, "field")?)?, ambient as usize, theta, stages as usize);
        cfg.step.seed = seed;
        put(out, VnChain(cmd_halperin(&cfg).map_err(fail)?))
    })
}

/// True when every assertion in the report passed. Null yields false.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn vn_report_all_pass(r: *const VnReport) -> bool {
    r.as_ref().is_some_and(|r| r.0.all_pass())
}

/// Number of assertions in the report. Null yields 0.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn vn_report_assertion_count(r: *const VnReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.assertions.len())
}

/// The report as JSON, without timing fields.
///
/// # Safety
/// `r` must be a live report handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_report_to_json(r: *const VnReport, out: *mut *mut c_char) -> VnStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| {
            set_error("report is null");
            VnStatus::NullPointer
        })?;
        put_str(out, r.0.canonical_json().map_err(fail)?)
    })
}

/// # Safety
/// `r` must be null or a report handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vn_report_free(r: *mut VnReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of stages after stage 0. Null yields 0.
///
/// # Safety
/// `c` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn vn_chain_stage_count(c: *const VnChain) -> usize {
    c.as_ref().map_or(0, |c| c.0.chain.stage_count())
}

/// True when every chain check (and the doubling bookkeeping, if present) holds.
///
/// # Safety
/// `c` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn vn_chain_all_hold(c: *const VnChain) -> bool {
    c.as_ref().is_some_and(|c| c.0.all_hold())
}

/// p_j and q_j of stage j (stage 0 is p = q = 1).
///
/// # Safety
/// `c` must be a live chain handle; `p` and `q` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn vn_chain_stage(c: *const VnChain, j: usize, p: *mut u64, q: *mut u64) -> VnStatus {
    guard(|| {
        let Some(c) = c.as_ref() else {
            set_error("chain is null");
            return Err(VnStatus::NullPointer);
        };
        if p.is_null() || q.is_null() {
            set_error("output pointer is null");
            return Err(VnStatus::NullPointer);
        }
        let ch = &c.0.chain;
        if j >= ch.p.len() {
            set_error(&format!("stage {j} out of range"));
            return Err(VnStatus::InputError);
        }
        *p = ch.p[j] as u64;
        *q = ch.q[j] as u64;
        Ok(())
    })
}

/// The chain transcript as JSON.
///
/// # Safety
/// `c` must be a live chain handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vn_chain_to_json(c: *const VnChain, out: *mut *mut c_char) -> VnStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| {
            set_error("chain is null");
            VnStatus::NullPointer
        })?;
        put_str(out, c.0.to_json().map_err(fail)?)
    })
}

/// # Safety
/// `c` must be null or a chain handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vn_chain_free(c: *mut VnChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Assertion("x".into())), VnStatus::AssertionFailure);
        assert_eq!(status_of(&Error::Infeasible("x".into())), VnStatus::Infeasible);
        assert_eq!(status_of(&Error::Construction("x".into())), VnStatus::ConstructionFailure);
        assert_eq!(status_of(&Error::Input("x".into())), VnStatus::InputError);
    }

    #[test]
    fn null_out_pointer_is_rejected() {
        let s = unsafe { vn_k_constant(2, ptr::null_mut()) };
        assert_eq!(s, VnStatus::NullPointer);
    }
}
