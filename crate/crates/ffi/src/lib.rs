//! C ABI over the simulation and verification engine.
//!
//! Conventions:
//! * every fallible call returns an [`EtsmcStatus`]; outputs come back
//!   through out-pointers that are written only on `ETSMC_OK`
//! * handles are opaque and freed with their matching `_free` function
//! * strings returned by the library are NUL-terminated, UTF-8, and must be
//!   released with [`etsmc_string_free`]
//! * [`etsmc_last_error_message`] describes the most recent failure on the
//!   calling thread
//!
//! The installed header lives at `include/etsmc.h` and is maintained by
//! hand; `tests/header_sync.rs` keeps it aligned with the exported symbols.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use etsmc::scenario::{preset, Scenario, ScenarioConfig};
use etsmc::sim::{compute_metrics, run, write_outputs, Metrics, Trace};

/// Status codes shared with the C header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtsmcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    RuntimeDivergence = 4,
    IoError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &etsmc::Error) -> EtsmcStatus {
    match e {
        etsmc::Error::NonFiniteState { .. } => EtsmcStatus::RuntimeDivergence,
        etsmc::Error::Io(_) => EtsmcStatus::IoError,
        _ => EtsmcStatus::ConfigError,
    }
}

/// Opaque resolved scenario.
pub struct EtsmcScenario {
    scenario: Scenario,
    config: ScenarioConfig,
}

/// Opaque finished run: the trace plus its metrics and config echo.
pub struct EtsmcTrace {
    trace: Trace,
    metrics: Metrics,
    config_echo: String,
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, EtsmcStatus> {
    if ptr.is_null() {
        set_error(format!("{what}: null pointer"));
        return Err(EtsmcStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        set_error(format!("{what}: invalid UTF-8: {e}"));
        EtsmcStatus::InvalidUtf8
    })
}

fn make_scenario(config: ScenarioConfig, out: *mut *mut EtsmcScenario) -> EtsmcStatus {
    match config.resolve() {
        Ok(scenario) => {
            let handle = Box::new(EtsmcScenario { scenario, config });
            unsafe { *out = Box::into_raw(handle) };
            EtsmcStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Build a scenario from a built-in preset name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn etsmc_scenario_from_preset(
    name: *const c_char,
    out: *mut *mut EtsmcScenario,
) -> EtsmcStatus {
    if out.is_null() {
        set_error("out: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let name = match read_str(name, "name") {
        Ok(s) => s,
        Err(st) => return st,
    };
    match preset(name) {
        Some(cfg) => make_scenario(cfg, out),
        None => {
            set_error(format!("unknown preset '{name}'"));
            EtsmcStatus::ConfigError
        }
    }
}

/// Build a scenario from TOML text (same schema as the CLI config files).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn etsmc_scenario_from_toml(
    text: *const c_char,
    out: *mut *mut EtsmcScenario,
) -> EtsmcStatus {
    if out.is_null() {
        set_error("out: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let text = match read_str(text, "text") {
        Ok(s) => s,
        Err(st) => return st,
    };
    match ScenarioConfig::from_toml(text) {
        Ok(cfg) => make_scenario(cfg, out),
        Err(e) => {
            set_error(e.to_string());
            EtsmcStatus::ConfigError
        }
    }
}

/// Release a scenario handle. Null is ignored.
///
/// # Safety
/// `scenario` must have come from a scenario constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn etsmc_scenario_free(scenario: *mut EtsmcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Run one seed; on success the caller owns the returned trace handle.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn etsmc_run(
    scenario: *const EtsmcScenario,
    seed: u64,
    out: *mut *mut EtsmcTrace,
) -> EtsmcStatus {
    if scenario.is_null() || out.is_null() {
        set_error("scenario/out: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let handle = &*scenario;
    match run(&handle.scenario, seed) {
        Ok(trace) => {
            let metrics =
                compute_metrics(&trace, handle.config.theta_band, &handle.config.fault);
            let boxed = Box::new(EtsmcTrace {
                trace,
                metrics,
                config_echo: handle.config.to_toml(),
            });
            *out = Box::into_raw(boxed);
            EtsmcStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Metrics of a finished run as a JSON string (free with etsmc_string_free).
///
/// # Safety
/// `trace` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn etsmc_trace_metrics_json(
    trace: *const EtsmcTrace,
    out_json: *mut *mut c_char,
) -> EtsmcStatus {
    if trace.is_null() || out_json.is_null() {
        set_error("trace/out_json: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let handle = &*trace;
    match serde_json::to_string_pretty(&handle.metrics) {
        Ok(json) => {
            let c = CString::new(json).unwrap_or_default();
            *out_json = c.into_raw();
            EtsmcStatus::Ok
        }
        Err(e) => {
            set_error(format!("metrics serialization: {e}"));
            EtsmcStatus::ConfigError
        }
    }
}

/// Number of released events in a finished run.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn etsmc_trace_release_count(trace: *const EtsmcTrace) -> u64 {
    if trace.is_null() {
        return 0;
    }
    (*trace).metrics.total_releases
}

/// Write trace.csv, events.csv, modes.csv, metrics.json and config.toml.
///
/// # Safety
/// `trace` must be a live handle, `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn etsmc_trace_write_outputs(
    trace: *const EtsmcTrace,
    dir: *const c_char,
) -> EtsmcStatus {
    if trace.is_null() {
        set_error("trace: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let dir = match read_str(dir, "dir") {
        Ok(s) => s,
        Err(st) => return st,
    };
    let handle = &*trace;
    match write_outputs(&handle.trace, &handle.metrics, &handle.config_echo, Path::new(dir)) {
        Ok(()) => EtsmcStatus::Ok,
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Release a trace handle. Null is ignored.
///
/// # Safety
/// `trace` must have come from etsmc_run and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn etsmc_trace_free(trace: *mut EtsmcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Check a certificate (TOML text) against a scenario; the feasibility
/// report comes back as JSON (free with etsmc_string_free).
///
/// # Safety
/// `scenario` must be a live handle, `certificate_toml` a NUL-terminated
/// string, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn etsmc_verify_certificate(
    scenario: *const EtsmcScenario,
    certificate_toml: *const c_char,
    out_json: *mut *mut c_char,
) -> EtsmcStatus {
    use etsmc::lmi::{check_certificate, CertificateSpec, DEFAULT_TOL};
    if scenario.is_null() || out_json.is_null() {
        set_error("scenario/out_json: null pointer".into());
        return EtsmcStatus::NullArgument;
    }
    let text = match read_str(certificate_toml, "certificate_toml") {
        Ok(s) => s,
        Err(st) => return st,
    };
    let sc = &(*scenario).scenario;
    let result = CertificateSpec::from_toml(text)
        .and_then(|spec| {
            spec.resolve(
                sc.n_modes,
                sc.plant_modes[0].n_x(),
                sc.n_followers,
                &sc.gains.gains.k_mats,
            )
        })
        .and_then(|cert| {
            check_certificate(&cert, &sc.plant_modes, &sc.couplings, &sc.process, DEFAULT_TOL)
        });
    match result {
        Ok(report) => match serde_json::to_string_pretty(&report) {
            Ok(json) => {
                let c = CString::new(json).unwrap_or_default();
                *out_json = c.into_raw();
                EtsmcStatus::Ok
            }
            Err(e) => {
                set_error(format!("report serialization: {e}"));
                EtsmcStatus::ConfigError
            }
        },
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have been returned by an etsmc function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn etsmc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing etsmc call on the same thread.
#[no_mangle]
pub extern "C" fn etsmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map(|c| c.as_ptr()).unwrap_or(std::ptr::null())
    })
}
