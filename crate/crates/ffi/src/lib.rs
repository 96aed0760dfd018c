//! C ABI over the interchain core.
//!
//! Every fallible call returns an [`IcStatus`]; on failure the message is
//! available from [`ic_last_error`] on the same thread. Handles are opaque
//! and owned by the caller until passed to their `_free` function. Strings
//! returned to C must be released with [`ic_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use interchain::compiler::{stake_requirement, Party, Tdg, VesConfig};
use interchain::crypto::Digest;
use interchain::harness::{compile_program, App, RunReport, Scenario, World};
use interchain::merkle::{verify_membership, verify_non_membership, MembershipProof, NonMembershipProof};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    Parse = 4,
    Compile = 5,
    Run = 6,
    CapExceeded = 7,
    Decode = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcParty {
    Ves = 0,
    Client = 1,
}

impl From<IcParty> for Party {
    fn from(p: IcParty) -> Party {
        match p {
            IcParty::Ves => Party::Ves,
            IcParty::Client => Party::Client,
        }
    }
}

/// A compiled transaction dependency graph.
pub struct IcTdg(Tdg);

/// The report of one scenario run.
pub struct IcReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IcStatus, String);

fn fail<T>(status: IcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording the error text and mapping panics to `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside interchain");
            IcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(IcStatus::NullArgument, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s),
        Err(_) => fail(IcStatus::InvalidUtf8, format!("{what} is not UTF-8")),
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| fail(IcStatus::NullArgument, format!("{what} is null")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(IcStatus::NullArgument, format!("{what} is null")), Ok)
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if p.is_null() {
        return fail(IcStatus::NullArgument, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ic_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Compiles an HSL program. `config` may be null, in which case
/// `<ifaces>/ves.toml` is used.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ic_compile(
    program: *const c_char,
    ifaces: *const c_char,
    config: *const c_char,
    out: *mut *mut IcTdg,
) -> IcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let program = PathBuf::from(str_arg(program, "program")?);
        let ifaces = PathBuf::from(str_arg(ifaces, "ifaces")?);
        let config = if config.is_null() { ifaces.join("ves.toml") } else { PathBuf::from(str_arg(config, "config")?) };
        for p in [&program, &ifaces, &config] {
            if !p.exists() {
                return fail(IcStatus::NotFound, format!("{} does not exist", p.display()));
            }
        }
        let cfg = VesConfig::load(&config).or_else(|e| fail(IcStatus::Parse, e.to_string()))?;
        let tdg = compile_program(&program, &ifaces, &cfg).or_else(|e| fail(IcStatus::Compile, format!("{e:#}")))?;
        *out = Box::into_raw(Box::new(IcTdg(tdg)));
        Ok(())
    })
}

/// Parses a graph from its JSON form.
///
/// # Safety
/// `json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ic_tdg_from_json(json: *const c_char, out: *mut *mut IcTdg) -> IcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let tdg = Tdg::from_json(str_arg(json, "json")?).or_else(|e| fail(IcStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(IcTdg(tdg)));
        Ok(())
    })
}

/// Canonical JSON of the graph, or null if `tdg` is null.
///
/// # Safety
/// `tdg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ic_tdg_to_json(tdg: *const IcTdg) -> *mut c_char {
    tdg.as_ref().map_or(ptr::null_mut(), |t| to_c_string(t.0.to_json()))
}

/// Number of transaction wrappers; 0 for a null handle.
///
/// # Safety
/// `tdg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ic_tdg_len(tdg: *const IcTdg) -> usize {
    tdg.as_ref().map_or(0, |t| t.0.len())
}

/// Stake `party` must lock for the graph.
///
/// # Safety
/// `tdg` must be null or a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ic_tdg_stake(tdg: *const IcTdg, party: IcParty, cap: usize, out: *mut u64) -> IcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let tdg = ref_arg(tdg, "tdg")?;
        *out = stake_requirement(&tdg.0, party.into(), cap).or_else(|e| fail(IcStatus::CapExceeded, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `tdg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ic_tdg_free(tdg: *mut IcTdg) {
    if !tdg.is_null() {
        drop(Box::from_raw(tdg));
    }
}

/// Runs a scenario file. A negative `seed` keeps the file's seed.
///
/// # Safety
/// `scenario` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ic_run_scenario(scenario: *const c_char, seed: i64, out: *mut *mut IcReport) -> IcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(str_arg(scenario, "scenario")?);
        if !path.is_file() {
            return fail(IcStatus::NotFound, format!("no scenario at {}", path.display()));
        }
        let mut s = Scenario::load(path).or_else(|e| fail(IcStatus::Parse, format!("{e:#}")))?;
        if let Ok(seed) = u64::try_from(seed) {
            s.seed = seed;
        }
        let app = App::load(&s.app_dir()).or_else(|e| fail(IcStatus::Parse, format!("{e:#}")))?;
        let world = World::new(s, app).or_else(|e| fail(IcStatus::Run, format!("{e:#}")))?;
        *out = Box::into_raw(Box::new(IcReport(world.run().0)));
        Ok(())
    })
}

/// True when atomicity held and every declared expectation was met.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ic_report_passed(report: *const IcReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.passed())
}

/// `committed`, `reverted`, `aborted` or `unsettled`; null for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ic_report_outcome(report: *const IcReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| to_c_string(r.0.outcome.clone()))
}

/// The full report as JSON with sorted keys.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ic_report_to_json(report: *const IcReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| to_c_string(r.0.to_json()))
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ic_report_free(report: *mut IcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn root_arg(root: *const u8) -> Result<Digest, Failure> {
    let b = bytes_arg(root, 32, "root")?;
    Ok(Digest(b.try_into().expect("32 bytes")))
}

/// Checks an encoded membership proof against a 32-byte root.
///
/// # Safety
/// `root` must point to 32 bytes, `proof` to `len` bytes; `valid` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ic_verify_membership(root: *const u8, proof: *const u8, len: usize, valid: *mut bool) -> IcStatus {
    guard(|| {
        let valid = out_arg(valid, "valid")?;
        *valid = false;
        let root = root_arg(root)?;
        let p = MembershipProof::from_bytes(bytes_arg(proof, len, "proof")?).or_else(|e| fail(IcStatus::Decode, e.to_string()))?;
        *valid = verify_membership(&root, &p);
        Ok(())
    })
}

/// Checks an encoded non-membership proof for `key` against a root.
///
/// # Safety
/// `root` must point to 32 bytes, `key` to `key_len` bytes and `proof` to
/// `len` bytes; `valid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ic_verify_non_membership(
    root: *const u8,
    key: *const u8,
    key_len: usize,
    proof: *const u8,
    len: usize,
    valid: *mut bool,
) -> IcStatus {
    guard(|| {
        let valid = out_arg(valid, "valid")?;
        *valid = false;
        let root = root_arg(root)?;
        let key = bytes_arg(key, key_len, "key")?;
        let p = NonMembershipProof::from_bytes(bytes_arg(proof, len, "proof")?).or_else(|e| fail(IcStatus::Decode, e.to_string()))?;
        *valid = verify_non_membership(&root, key, &p);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> Option<String> {
        let p = ic_last_error();
        (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let st = unsafe { ic_tdg_from_json(ptr::null(), &mut out) };
        assert_eq!(st, IcStatus::NullArgument);
        assert!(out.is_null());
        assert_eq!(last_error().as_deref(), Some("json is null"));
        assert_eq!(unsafe { ic_tdg_stake(ptr::null(), IcParty::Ves, 20, ptr::null_mut()) }, IcStatus::NullArgument);
    }

    #[test]
    fn success_clears_the_error() {
        let mut out = ptr::null_mut();
        unsafe { ic_tdg_from_json(c"{".as_ptr(), &mut out) };
        assert!(last_error().unwrap().contains("line 1"));
        let json =
            CString::new(r#"{"session":{"isc_chain":"C","isc_unit":"u","default_deadline_blocks":1},"wrappers":[],"edges":[]}"#).unwrap();
        assert_eq!(unsafe { ic_tdg_from_json(json.as_ptr(), &mut out) }, IcStatus::Ok);
        assert!(last_error().is_none());
        assert_eq!(unsafe { ic_tdg_len(out) }, 0);
        unsafe { ic_tdg_free(out) };
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let bad = [0xffu8, 0xfe, 0];
        let mut out = ptr::null_mut();
        let st = unsafe { ic_run_scenario(bad.as_ptr().cast(), -1, &mut out) };
        assert_eq!(st, IcStatus::InvalidUtf8);
    }

    #[test]
    fn panics_stop_at_the_boundary() {
        assert_eq!(guard(|| panic!("boom")), IcStatus::Panic);
        assert_eq!(last_error().as_deref(), Some("panic inside interchain"));
    }

    #[test]
    fn null_handles_are_harmless() {
        unsafe {
            ic_tdg_free(ptr::null_mut());
            ic_report_free(ptr::null_mut());
            ic_string_free(ptr::null_mut());
            assert!(ic_tdg_to_json(ptr::null()).is_null());
            assert!(!ic_report_passed(ptr::null()));
        }
    }
}
