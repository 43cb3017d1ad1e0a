//! C ABI over `confid`.
//!
//! Conventions:
//! * every function returns a [`ConfidStatus`]; outputs go through pointer arguments;
//! * handles are opaque, created by a constructor (`confid_scenario_*`, `confid_run`, `confid_lease_decode`)
//!   and released by the matching `*_free`;
//! * byte outputs use `(buf, cap, len_out)`: `*len_out` always receives the required length, and
//!   `buf` is written only when `cap` suffices, otherwise `CONFID_STATUS_BUFFER_TOO_SMALL`;
//! * a failing call stores a message retrievable with [`confid_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use confid::admin::lease::{decode_lease, encode_lease};
use confid::admin::{Lease, LeaseError};
use confid::codec::Decode as _;
use confid::crypto::{hash, PublicKey, DIGEST_LEN};
use confid::harness::{run_scenario, RunResult, ScenarioConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    TruncatedLease = 4,
    SigLenMismatch = 5,
    InvalidRole = 6,
    InvalidExpiration = 7,
    BufferTooSmall = 8,
    InvalidKey = 9,
    Panic = 10,
}

pub struct ConfidScenario {
    inner: ScenarioConfig,
}

pub struct ConfidResult {
    inner: RunResult,
}

pub struct ConfidLease {
    inner: Lease,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: ConfidStatus, msg: impl Into<String>) -> ConfidStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> ConfidStatus) -> ConfidStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ConfidStatus::Panic, "internal panic"))
}

/// # Safety
/// `buf` must be null or valid for `cap` writable bytes; `len_out` must be valid or null.
unsafe fn write_bytes(bytes: &[u8], buf: *mut u8, cap: usize, len_out: *mut usize) -> ConfidStatus {
    if len_out.is_null() {
        return fail(ConfidStatus::NullPointer, "len_out is null");
    }
    *len_out = bytes.len();
    if buf.is_null() || cap < bytes.len() {
        return fail(ConfidStatus::BufferTooSmall, format!("need {} bytes", bytes.len()));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    ConfidStatus::Ok
}

/// # Safety
/// `data` must be valid for `len` readable bytes unless `len` is 0.
unsafe fn read_bytes<'a>(data: *const u8, len: usize) -> Option<&'a [u8]> {
    if len == 0 {
        return Some(&[]);
    }
    (!data.is_null()).then(|| std::slice::from_raw_parts(data, len))
}

fn lease_status(e: LeaseError) -> ConfidStatus {
    let status = match e {
        LeaseError::TruncatedLease => ConfidStatus::TruncatedLease,
        LeaseError::SigLenMismatch => ConfidStatus::SigLenMismatch,
        LeaseError::InvalidRole => ConfidStatus::InvalidRole,
        LeaseError::InvalidExpiration => ConfidStatus::InvalidExpiration,
    };
    fail(status, e.to_string())
}

/// Copies the calling thread's last error message (UTF-8, not NUL-terminated).
///
/// # Safety
/// See the buffer convention in the crate docs.
#[no_mangle]
pub unsafe extern "C" fn confid_last_error(buf: *mut u8, cap: usize, len_out: *mut usize) -> ConfidStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_bytes(msg.as_bytes(), buf, cap, len_out)
}

/// NUL-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn confid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// SHA-256 of `data[0..len]` into `out[0..32]`.
///
/// # Safety
/// `data` valid for `len` bytes; `out` valid for 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn confid_hash(data: *const u8, len: usize, out: *mut u8) -> ConfidStatus {
    guard(|| {
        let Some(data) = read_bytes(data, len) else { return fail(ConfidStatus::NullPointer, "data is null") };
        if out.is_null() {
            return fail(ConfidStatus::NullPointer, "out is null");
        }
        ptr::copy_nonoverlapping(hash(data).0.as_ptr(), out, DIGEST_LEN);
        ConfidStatus::Ok
    })
}

/// Parses and validates a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn confid_scenario_from_toml(toml: *const c_char, out: *mut *mut ConfidScenario) -> ConfidStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(ConfidStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else { return fail(ConfidStatus::InvalidUtf8, "scenario is not UTF-8") };
        match ScenarioConfig::from_toml(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ConfidScenario { inner }));
                ConfidStatus::Ok
            }
            Err(e) => fail(ConfidStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Honest baseline cluster with `agents` agents.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn confid_scenario_baseline(
    n: u32,
    k: u32,
    agents: u32,
    seed: u64,
    out: *mut *mut ConfidScenario,
) -> ConfidStatus {
    guard(|| {
        if out.is_null() {
            return fail(ConfidStatus::NullPointer, "out is null");
        }
        let inner = ScenarioConfig::baseline(n, k, agents, seed);
        if let Err(e) = inner.validate() {
            return fail(ConfidStatus::InvalidConfig, e.to_string());
        }
        *out = Box::into_raw(Box::new(ConfidScenario { inner }));
        ConfidStatus::Ok
    })
}

/// # Safety
/// `scenario` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn confid_scenario_free(scenario: *mut ConfidScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Serializes the scenario back to TOML.
///
/// # Safety
/// `scenario` must be a live handle; see the buffer convention.
#[no_mangle]
pub unsafe extern "C" fn confid_scenario_toml(
    scenario: *const ConfidScenario,
    buf: *mut u8,
    cap: usize,
    len_out: *mut usize,
) -> ConfidStatus {
    guard(|| match scenario.as_ref() {
        Some(s) => write_bytes(s.inner.to_toml().as_bytes(), buf, cap, len_out),
        None => fail(ConfidStatus::NullPointer, "scenario is null"),
    })
}

/// Runs the scenario to completion.
///
/// # Safety
/// `scenario` must be a live handle; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn confid_run(scenario: *const ConfidScenario, out: *mut *mut ConfidResult) -> ConfidStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(ConfidStatus::NullPointer, "null argument");
        };
        match run_scenario(&s.inner) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ConfidResult { inner }));
                ConfidStatus::Ok
            }
            Err(e) => fail(ConfidStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be a live handle; `pass` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn confid_result_all_pass(result: *const ConfidResult, pass: *mut bool) -> ConfidStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), pass.is_null()) else {
            return fail(ConfidStatus::NullPointer, "null argument");
        };
        *pass = r.inner.all_pass();
        ConfidStatus::Ok
    })
}

/// Canonical JSON of the result.
///
/// # Safety
/// `result` must be a live handle; see the buffer convention.
#[no_mangle]
pub unsafe extern "C" fn confid_result_json(
    result: *const ConfidResult,
    buf: *mut u8,
    cap: usize,
    len_out: *mut usize,
) -> ConfidStatus {
    guard(|| match result.as_ref() {
        Some(r) => write_bytes(r.inner.to_json().as_bytes(), buf, cap, len_out),
        None => fail(ConfidStatus::NullPointer, "result is null"),
    })
}

/// # Safety
/// `result` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn confid_result_free(result: *mut ConfidResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Decodes a wire-format lease; the error status names the framing failure.
///
/// # Safety
/// `data` valid for `len` bytes; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn confid_lease_decode(data: *const u8, len: usize, out: *mut *mut ConfidLease) -> ConfidStatus {
    guard(|| {
        let (Some(bytes), false) = (read_bytes(data, len), out.is_null()) else {
            return fail(ConfidStatus::NullPointer, "null argument");
        };
        match decode_lease(bytes) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ConfidLease { inner }));
                ConfidStatus::Ok
            }
            Err(e) => lease_status(e),
        }
    })
}

/// # Safety
/// `lease` must be a live handle; see the buffer convention.
#[no_mangle]
pub unsafe extern "C" fn confid_lease_encode(
    lease: *const ConfidLease,
    buf: *mut u8,
    cap: usize,
    len_out: *mut usize,
) -> ConfidStatus {
    guard(|| match lease.as_ref() {
        Some(l) => write_bytes(&encode_lease(&l.inner), buf, cap, len_out),
        None => fail(ConfidStatus::NullPointer, "lease is null"),
    })
}

/// Issuing administrator, role bits and expiration (agent trusted-time seconds).
///
/// # Safety
/// `lease` must be a live handle; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn confid_lease_fields(
    lease: *const ConfidLease,
    admin_id: *mut u32,
    role: *mut u32,
    expiration: *mut u64,
) -> ConfidStatus {
    guard(|| {
        let Some(l) = lease.as_ref() else { return fail(ConfidStatus::NullPointer, "lease is null") };
        if let Some(a) = admin_id.as_mut() {
            *a = l.inner.admin_id;
        }
        if let Some(r) = role.as_mut() {
            *r = l.inner.role.bits();
        }
        if let Some(e) = expiration.as_mut() {
            *e = l.inner.expiration;
        }
        ConfidStatus::Ok
    })
}

/// Checks the lease signature against one encoded administrator key.
///
/// # Safety
/// `lease` must be a live handle; `key` valid for `key_len` bytes; `valid` for one write.
#[no_mangle]
pub unsafe extern "C" fn confid_lease_verify(
    lease: *const ConfidLease,
    key: *const u8,
    key_len: usize,
    valid: *mut bool,
) -> ConfidStatus {
    guard(|| {
        let (Some(l), Some(key), false) = (lease.as_ref(), read_bytes(key, key_len), valid.is_null()) else {
            return fail(ConfidStatus::NullPointer, "null argument");
        };
        let Ok(pk) = PublicKey::from_bytes(key) else { return fail(ConfidStatus::InvalidKey, "malformed public key") };
        *valid = l.inner.verify_signature(&pk);
        ConfidStatus::Ok
    })
}

/// # Safety
/// `lease` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn confid_lease_free(lease: *mut ConfidLease) {
    if !lease.is_null() {
        drop(Box::from_raw(lease));
    }
}
