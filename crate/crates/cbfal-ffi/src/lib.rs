//! C ABI over the `cbfal` library.
//!
//! The surface is deliberately small and handle-based: build a scenario from
//! its registry name plus optional TOML overrides, run it, then pull the
//! check report as JSON or the recorded trajectory as CSV. A standalone entry
//! point exposes the closed-form minimum-norm filter for callers that bring
//! their own constraint evaluation.
//!
//! Conventions, uniform across the surface:
//!
//! * Every fallible function returns [`CbfStatus`] and reports detail through
//!   [`cbf_last_error`].
//! * No panic crosses the boundary; a caught panic maps to
//!   `CBF_STATUS_INTERNAL`.
//! * Strings returned through out-parameters are NUL-terminated UTF-8 owned
//!   by the caller until passed to [`cbf_string_free`]. Strings returned
//!   directly are borrowed: static, or owned by the handle or thread that
//!   produced them.
//! * Handles are not synchronized; use each from one thread at a time.
//!
//! The build script regenerates `include/cbfal.h` from this file, so the
//! header cannot drift from the signatures it mirrors.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cbfal::config::Overrides;
use cbfal::integrator::{write_records_csv, SimOutcome};
use cbfal::report::Report;
use cbfal::safety_filter::{self, Constraint, DEFAULT_EPSILON_GUARD};
use cbfal::scenarios::{build, Scenario};
use cbfal::Error;
use nalgebra::{DVector, RowDVector};

// ─── status codes ───────────────────────────────────────────────────────────

/// Result of a library call. Zero is success; everything else names the
/// first reason the call could not complete.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbfStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The scenario registry has no entry under the given name.
    UnknownScenario = 3,
    /// An override or configuration value violated a documented precondition.
    InvalidConfig = 4,
    /// The run could not produce a usable result, for example a constraint
    /// became degenerate while violated.
    RunFailed = 5,
    /// Reading or writing a file failed.
    Io = 6,
    /// A panic was caught at the boundary; treat in-flight handles as
    /// suspect and rebuild them.
    Internal = 7,
}

/// Wraps a NUL-terminated byte string; the terminator is checked at compile
/// time wherever the result feeds a `const`.
const fn cstr(bytes: &'static [u8]) -> &'static CStr {
    match CStr::from_bytes_with_nul(bytes) {
        Ok(v) => v,
        Err(_) => panic!("string is missing its NUL terminator"),
    }
}

impl CbfStatus {
    /// Collapses the library error tree onto the C-visible codes: name
    /// resolution, configuration, i/o, and everything runtime-shaped.
    fn from_error(err: &Error) -> Self {
        match err {
            Error::UnknownScenario { .. } => Self::UnknownScenario,
            Error::InvalidOverride { .. }
            | Error::InvalidConfig { .. }
            | Error::InvalidClassKe { .. }
            | Error::NotExtendable { .. }
            | Error::GradientMismatch { .. }
            | Error::DimensionMismatch { .. } => Self::InvalidConfig,
            Error::Io(_) => Self::Io,
            _ => Self::RunFailed,
        }
    }

    fn name(self) -> &'static CStr {
        // Byte strings with explicit terminators keep the table readable by
        // the header generator's parser, which predates C-string literals.
        match self {
            Self::Ok => cstr(b"ok\0"),
            Self::NullPointer => cstr(b"null pointer\0"),
            Self::InvalidUtf8 => cstr(b"invalid utf-8\0"),
            Self::UnknownScenario => cstr(b"unknown scenario\0"),
            Self::InvalidConfig => cstr(b"invalid configuration\0"),
            Self::RunFailed => cstr(b"run failed\0"),
            Self::Io => cstr(b"i/o error\0"),
            Self::Internal => cstr(b"internal error\0"),
        }
    }
}

// ─── last-error storage ──────────────────────────────────────────────────────

thread_local! {
    /// Message for the most recent failure on this thread, empty when none.
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    // Interior NULs cannot occur in the library's messages, but a blank in
    // their place beats losing the message to a CString constructor error.
    let owned = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

/// Records the error's message and returns its status code.
fn fail(err: &Error) -> CbfStatus {
    set_last_error(&err.to_string());
    CbfStatus::from_error(err)
}

/// Returns the message for the most recent failure on the calling thread, or
/// an empty string if none has occurred. The pointer stays valid until the
/// next failing call on the same thread; copy the contents out before making
/// another call. Do not free.
#[no_mangle]
pub extern "C" fn cbf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ─── handles ─────────────────────────────────────────────────────────────────

/// A built scenario: plant, barrier functional, filter, and configuration
/// resolved from the registry with overrides applied. Opaque; create with
/// [`cbf_scenario_build`], release with [`cbf_scenario_free`].
pub struct CbfScenario {
    inner: Scenario,
    name: CString,
}

/// A completed run: the check report plus, for simulating modes, the recorded
/// trajectory. Opaque; produced by [`cbf_scenario_run`], released with
/// [`cbf_run_free`].
pub struct CbfRun {
    report: Report,
    outcome: Option<SimOutcome>,
    state_dim: usize,
    input_dim: usize,
}

// ─── boundary plumbing ───────────────────────────────────────────────────────

/// Runs a body and converts any panic into `CBF_STATUS_INTERNAL` instead of
/// unwinding into the caller.
fn guarded(body: impl FnOnce() -> CbfStatus) -> CbfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("panic caught at the ffi boundary");
            CbfStatus::Internal
        }
    }
}

fn null_arg(what: &str) -> CbfStatus {
    set_last_error(&format!("{what} must not be null"));
    CbfStatus::NullPointer
}

/// Reads a required C string argument, distinguishing null from non-UTF-8 so
/// the caller's bug is named precisely.
///
/// # Safety
///
/// `ptr`, when non-null, must point to a NUL-terminated string that outlives
/// the borrow.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CbfStatus> {
    if ptr.is_null() {
        return Err(null_arg(what));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_last_error(&format!("{what} is not valid UTF-8"));
        CbfStatus::InvalidUtf8
    })
}

// ─── scenario lifecycle ──────────────────────────────────────────────────────

/// Builds a scenario from its registry name (`case1` through `case4`,
/// `predator_prey`) with optional TOML overrides. Pass null or an empty
/// string for defaults; the override keys match the CLI's `--set` names, with
/// nested tables flattened as dotted keys. On success stores a new handle in
/// `*out`; on failure `*out` is untouched.
///
/// # Safety
///
/// `name` and `overrides_toml` must be NUL-terminated when non-null; `out`
/// must be a valid location to store a pointer.
#[no_mangle]
pub unsafe extern "C" fn cbf_scenario_build(
    name: *const c_char,
    overrides_toml: *const c_char,
    out: *mut *mut CbfScenario,
) -> CbfStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let name = match unsafe { read_str(name, "name") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let toml_text = if overrides_toml.is_null() {
            ""
        } else {
            match unsafe { read_str(overrides_toml, "overrides_toml") } {
                Ok(s) => s,
                Err(status) => return status,
            }
        };
        let overrides = match Overrides::from_toml_str(toml_text) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        match build(name, &overrides) {
            Ok(scenario) => {
                let name = CString::new(scenario.name()).unwrap_or_default();
                let handle = Box::new(CbfScenario {
                    inner: scenario,
                    name,
                });
                unsafe { *out = Box::into_raw(handle) };
                CbfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Returns the scenario's registry name, or null for a null handle. The
/// pointer is owned by the handle and stays valid until
/// [`cbf_scenario_free`]; do not free.
///
/// # Safety
///
/// `scenario`, when non-null, must be a live handle from
/// [`cbf_scenario_build`].
#[no_mangle]
pub unsafe extern "C" fn cbf_scenario_name(scenario: *const CbfScenario) -> *const c_char {
    if scenario.is_null() {
        return ptr::null();
    }
    unsafe { (*scenario).name.as_ptr() }
}

/// Runs the scenario and evaluates its checks. Simulating modes record the
/// full trajectory; demonstration scenarios, which exist to show a structural
/// rejection, produce a report without records. On success stores a new
/// handle in `*out`.
///
/// # Safety
///
/// `scenario` must be a live handle from [`cbf_scenario_build`]; `out` must
/// be a valid location to store a pointer.
#[no_mangle]
pub unsafe extern "C" fn cbf_scenario_run(
    scenario: *const CbfScenario,
    out: *mut *mut CbfRun,
) -> CbfStatus {
    guarded(|| {
        if scenario.is_null() {
            return null_arg("scenario");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let sc = unsafe { &(*scenario).inner };
        let state_dim = sc.plant().state_dim();
        let input_dim = sc.plant().input_dim();
        let run = if sc.is_demonstration() {
            match sc.demonstrate() {
                Ok(report) => CbfRun {
                    report,
                    outcome: None,
                    state_dim,
                    input_dim,
                },
                Err(e) => return fail(&e),
            }
        } else {
            match sc.run() {
                Ok(outcome) => CbfRun {
                    report: sc.run_checks(&outcome),
                    outcome: Some(outcome),
                    state_dim,
                    input_dim,
                },
                Err(e) => return fail(&e),
            }
        };
        unsafe { *out = Box::into_raw(Box::new(run)) };
        CbfStatus::Ok
    })
}

/// Releases a scenario handle. Null is a no-op.
///
/// # Safety
///
/// `scenario` must be null or a handle from [`cbf_scenario_build`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cbf_scenario_free(scenario: *mut CbfScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

// ─── run results ─────────────────────────────────────────────────────────────

/// Stores whether every check in the run's report passed.
///
/// # Safety
///
/// `run` must be a live handle from [`cbf_scenario_run`]; `out` must be a
/// valid location to store a `bool`.
#[no_mangle]
pub unsafe extern "C" fn cbf_run_pass(run: *const CbfRun, out: *mut bool) -> CbfStatus {
    guarded(|| {
        if run.is_null() {
            return null_arg("run");
        }
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = (*run).report.pass };
        CbfStatus::Ok
    })
}

/// Serializes the run's check report as JSON. On success stores a heap
/// string in `*out`; release it with [`cbf_string_free`].
///
/// # Safety
///
/// `run` must be a live handle from [`cbf_scenario_run`]; `out` must be a
/// valid location to store a pointer.
#[no_mangle]
pub unsafe extern "C" fn cbf_run_report_json(
    run: *const CbfRun,
    out: *mut *mut c_char,
) -> CbfStatus {
    guarded(|| {
        if run.is_null() {
            return null_arg("run");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let json = unsafe { &*run }.report.to_json();
        match CString::new(json) {
            Ok(s) => {
                unsafe { *out = s.into_raw() };
                CbfStatus::Ok
            }
            // JSON string escaping excludes NUL, so this arm is unreachable
            // in practice; it exists so the conversion stays total.
            Err(_) => {
                set_last_error("report JSON contained an interior NUL");
                CbfStatus::Internal
            }
        }
    })
}

/// Writes the recorded trajectory as CSV with header
/// `t,x_0..x_{n-1},u_0..u_{m-1},H,He,phi,active`. Demonstration runs record
/// no trajectory and fail with `CBF_STATUS_INVALID_CONFIG`.
///
/// # Safety
///
/// `run` must be a live handle from [`cbf_scenario_run`]; `path` must be a
/// NUL-terminated file path.
#[no_mangle]
pub unsafe extern "C" fn cbf_run_write_csv(run: *const CbfRun, path: *const c_char) -> CbfStatus {
    guarded(|| {
        if run.is_null() {
            return null_arg("run");
        }
        let path = match unsafe { read_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let run = unsafe { &*run };
        let Some(outcome) = &run.outcome else {
            set_last_error("demonstration runs record no trajectory");
            return CbfStatus::InvalidConfig;
        };
        let file = match File::create(path) {
            Ok(f) => f,
            Err(e) => return fail(&Error::Io(e)),
        };
        let mut writer = BufWriter::new(file);
        if let Err(e) =
            write_records_csv(&outcome.records, run.state_dim, run.input_dim, &mut writer)
        {
            return fail(&e);
        }
        match writer.flush() {
            Ok(()) => CbfStatus::Ok,
            Err(e) => fail(&Error::Io(e)),
        }
    })
}

/// Releases a run handle. Null is a no-op.
///
/// # Safety
///
/// `run` must be null or a handle from [`cbf_scenario_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cbf_run_free(run: *mut CbfRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

// ─── direct filter evaluation ────────────────────────────────────────────────

/// Evaluates the closed-form minimum-norm filter on one constraint: given
/// the constraint value `phi` at the desired control, the input-path row
/// `phi0` (length `m`), and the desired control `u_des` (length `m`), writes
/// the filtered control to `u_out` (length `m`). A satisfied constraint
/// passes `u_des` through; a violated one is projected onto the constraint
/// boundary. Pass `epsilon_guard <= 0` for the library default denominator
/// guard. `active_out` may be null; when provided it receives whether the
/// constraint modified the control. A violated constraint with `|phi0|` at
/// or below the guard has no finite restoring control and fails with
/// `CBF_STATUS_RUN_FAILED`.
///
/// # Safety
///
/// `phi0`, `u_des`, and `u_out` must each point to `m` readable (writable
/// for `u_out`) doubles.
#[no_mangle]
pub unsafe extern "C" fn cbf_qp_filter(
    phi: f64,
    phi0: *const f64,
    m: usize,
    u_des: *const f64,
    epsilon_guard: f64,
    u_out: *mut f64,
    active_out: *mut bool,
) -> CbfStatus {
    guarded(|| {
        if phi0.is_null() {
            return null_arg("phi0");
        }
        if u_des.is_null() {
            return null_arg("u_des");
        }
        if u_out.is_null() {
            return null_arg("u_out");
        }
        if m == 0 {
            set_last_error("m must be positive");
            return CbfStatus::InvalidConfig;
        }
        let constraint = Constraint {
            phi,
            phi0: RowDVector::from_row_slice(unsafe { std::slice::from_raw_parts(phi0, m) }),
            h: 0.0,
            he: None,
            u_des: DVector::from_column_slice(unsafe { std::slice::from_raw_parts(u_des, m) }),
        };
        let guard = if epsilon_guard > 0.0 {
            epsilon_guard
        } else {
            DEFAULT_EPSILON_GUARD
        };
        match safety_filter::apply(&constraint, guard) {
            Ok(result) => {
                unsafe { std::slice::from_raw_parts_mut(u_out, m) }
                    .copy_from_slice(result.u.as_slice());
                if !active_out.is_null() {
                    unsafe { *active_out = result.active };
                }
                CbfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ─── metadata ────────────────────────────────────────────────────────────────

/// Returns the library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn cbf_version() -> *const c_char {
    const VERSION: &CStr = cstr(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes());
    VERSION.as_ptr()
}

/// Returns a static human-readable name for a status code; do not free.
#[no_mangle]
pub extern "C" fn cbf_status_name(status: CbfStatus) -> *const c_char {
    status.name().as_ptr()
}

/// Releases a string returned through an out-parameter of this library.
/// Null is a no-op.
///
/// # Safety
///
/// `s` must be null or a string obtained from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cbf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

// ─── tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    /// The direct filter entry point builds the same vectors and calls the
    /// same library function as the reference below, so the two must agree
    /// bit for bit.
    const EXACT: f64 = 0.0;

    fn c(s: &str) -> CString {
        CString::new(s).expect("test strings have no interior NUL")
    }

    fn build_handle(name: &str, overrides: Option<&str>) -> (CbfStatus, *mut CbfScenario) {
        let name_c = c(name);
        let overrides_c = overrides.map(c);
        let mut handle: *mut CbfScenario = ptr::null_mut();
        let status = unsafe {
            cbf_scenario_build(
                name_c.as_ptr(),
                overrides_c.as_ref().map_or(ptr::null(), |s| s.as_ptr()),
                &mut handle,
            )
        };
        (status, handle)
    }

    fn last_error_string() -> String {
        unsafe { CStr::from_ptr(cbf_last_error()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn build_run_report_csv_roundtrip() {
        let (status, scenario) = build_handle("case2", Some("t_end = 1.0"));
        assert_eq!(status, CbfStatus::Ok);
        let name = unsafe { CStr::from_ptr(cbf_scenario_name(scenario)) };
        assert_eq!(name.to_str().unwrap(), "case2");

        let mut run: *mut CbfRun = ptr::null_mut();
        assert_eq!(
            unsafe { cbf_scenario_run(scenario, &mut run) },
            CbfStatus::Ok
        );

        let mut pass = false;
        assert_eq!(unsafe { cbf_run_pass(run, &mut pass) }, CbfStatus::Ok);
        assert!(pass, "short filtered run satisfies its checks");

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { cbf_run_report_json(run, &mut json) },
            CbfStatus::Ok
        );
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
        unsafe { cbf_string_free(json) };
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["scenario"], "case2");
        assert_eq!(parsed["pass"], true);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let path_c = c(path.to_str().unwrap());
        assert_eq!(
            unsafe { cbf_run_write_csv(run, path_c.as_ptr()) },
            CbfStatus::Ok
        );
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("t,x_0,u_0,H,He,phi,active\n"));
        assert!(body.lines().count() > 2);

        unsafe { cbf_run_free(run) };
        unsafe { cbf_scenario_free(scenario) };
    }

    #[test]
    fn demonstration_runs_report_but_refuse_csv() {
        let (status, scenario) = build_handle("case4", None);
        assert_eq!(status, CbfStatus::Ok);
        let mut run: *mut CbfRun = ptr::null_mut();
        assert_eq!(
            unsafe { cbf_scenario_run(scenario, &mut run) },
            CbfStatus::Ok
        );

        let mut pass = false;
        assert_eq!(unsafe { cbf_run_pass(run, &mut pass) }, CbfStatus::Ok);
        assert!(
            pass,
            "the rejection demonstration is itself a passing report"
        );

        let path_c = c("unused.csv");
        assert_eq!(
            unsafe { cbf_run_write_csv(run, path_c.as_ptr()) },
            CbfStatus::InvalidConfig
        );
        assert!(last_error_string().contains("no trajectory"));

        unsafe { cbf_run_free(run) };
        unsafe { cbf_scenario_free(scenario) };
    }

    #[test]
    fn misuse_maps_to_distinct_status_codes() {
        let (status, handle) = build_handle("case9", None);
        assert_eq!(status, CbfStatus::UnknownScenario);
        assert!(
            handle.is_null(),
            "failed builds leave the out-pointer alone"
        );
        assert!(last_error_string().contains("unknown scenario"));

        let (status, _) = build_handle("case1", Some("bogus = 1.0"));
        assert_eq!(status, CbfStatus::InvalidConfig);

        let (status, _) = build_handle("case1", Some("not toml ["));
        assert_eq!(status, CbfStatus::InvalidConfig);

        let mut handle: *mut CbfScenario = ptr::null_mut();
        assert_eq!(
            unsafe { cbf_scenario_build(ptr::null(), ptr::null(), &mut handle) },
            CbfStatus::NullPointer
        );
        let name_c = c("case1");
        assert_eq!(
            unsafe { cbf_scenario_build(name_c.as_ptr(), ptr::null(), ptr::null_mut()) },
            CbfStatus::NullPointer
        );

        let not_utf8 = CString::new([0xffu8, 0xfe].as_slice()).unwrap();
        assert_eq!(
            unsafe { cbf_scenario_build(not_utf8.as_ptr(), ptr::null(), &mut handle) },
            CbfStatus::InvalidUtf8
        );

        assert_eq!(
            unsafe { cbf_scenario_run(ptr::null(), ptr::null_mut()) },
            CbfStatus::NullPointer
        );
        assert_eq!(
            unsafe { cbf_run_pass(ptr::null(), ptr::null_mut()) },
            CbfStatus::NullPointer
        );
    }

    #[test]
    fn qp_filter_matches_the_library_call() {
        let phi0 = [1.5, -0.25, 0.75];
        let u_des = [0.2, -1.0, 0.4];
        let mut u = [0.0_f64; 3];
        let mut active = false;

        // Violated constraint: projection, bit-identical to the library.
        let status = unsafe {
            cbf_qp_filter(
                -2.0,
                phi0.as_ptr(),
                3,
                u_des.as_ptr(),
                0.0,
                u.as_mut_ptr(),
                &mut active,
            )
        };
        assert_eq!(status, CbfStatus::Ok);
        assert!(active);
        let reference = safety_filter::apply(
            &Constraint {
                phi: -2.0,
                phi0: RowDVector::from_row_slice(&phi0),
                h: 0.0,
                he: None,
                u_des: DVector::from_column_slice(&u_des),
            },
            DEFAULT_EPSILON_GUARD,
        )
        .unwrap();
        for (ffi, lib) in u.iter().zip(reference.u.iter()) {
            assert!((ffi - lib).abs() <= EXACT);
        }

        // Satisfied constraint: passthrough, inactive.
        let status = unsafe {
            cbf_qp_filter(
                1.0,
                phi0.as_ptr(),
                3,
                u_des.as_ptr(),
                0.0,
                u.as_mut_ptr(),
                &mut active,
            )
        };
        assert_eq!(status, CbfStatus::Ok);
        assert!(!active);
        assert_eq!(u, u_des);

        // Violated with a zero input path: no finite control restores it.
        let zeros = [0.0_f64; 3];
        let status = unsafe {
            cbf_qp_filter(
                -1.0,
                zeros.as_ptr(),
                3,
                u_des.as_ptr(),
                0.0,
                u.as_mut_ptr(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, CbfStatus::RunFailed);
        assert!(last_error_string().contains("degenerate"));

        // Dimension zero is rejected before the slices are touched.
        let status = unsafe {
            cbf_qp_filter(
                -1.0,
                zeros.as_ptr(),
                0,
                u_des.as_ptr(),
                0.0,
                u.as_mut_ptr(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, CbfStatus::InvalidConfig);
    }

    #[test]
    fn metadata_entry_points_return_static_strings() {
        let version = unsafe { CStr::from_ptr(cbf_version()) }.to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));

        let name = unsafe { CStr::from_ptr(cbf_status_name(CbfStatus::UnknownScenario)) };
        assert_eq!(name.to_str().unwrap(), "unknown scenario");

        // Frees of null are no-ops rather than crashes.
        unsafe { cbf_string_free(ptr::null_mut()) };
        unsafe { cbf_scenario_free(ptr::null_mut()) };
        unsafe { cbf_run_free(ptr::null_mut()) };
    }

    #[test]
    fn generated_header_covers_the_exported_surface() {
        // build.rs regenerates the header before this crate compiles, so the
        // snapshot read here is always current.
        let header = include_str!("../include/cbfal.h");
        for needle in [
            "cbf_scenario_build",
            "cbf_scenario_run",
            "cbf_run_pass",
            "cbf_run_report_json",
            "cbf_run_write_csv",
            "cbf_qp_filter",
            "cbf_last_error",
            "cbf_string_free",
            "cbf_version",
            "CBF_STATUS_OK",
            "CbfScenario",
            "CbfRun",
        ] {
            assert!(header.contains(needle), "header is missing {needle}");
        }
    }
}
