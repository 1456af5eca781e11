//! C ABI for the unravel toolkit: opaque configuration handles, integer
//! error codes and a thread-local last-error message. The header is
//! generated into include/unravel.h at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::PathBuf;

use libc::c_char;

use unravel::config::{parse_config, ExperimentConfig};
use unravel::run::{run, validate};
use unravel::Error;

/// Success.
pub const UNRAVEL_OK: i32 = 0;
/// Null pointer or malformed UTF-8 argument.
pub const UNRAVEL_ERR_INVALID_ARGUMENT: i32 = 1;
/// Configuration text failed to parse.
pub const UNRAVEL_ERR_PARSE: i32 = 2;
/// Configuration parsed but failed validation.
pub const UNRAVEL_ERR_VALIDATION: i32 = 3;
/// Numerical failure while running (non-finite state, step size, ...).
pub const UNRAVEL_ERR_NUMERIC: i32 = 4;
/// Filesystem failure while writing outputs.
pub const UNRAVEL_ERR_IO: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => UNRAVEL_ERR_PARSE,
        Error::Validation(_) => UNRAVEL_ERR_VALIDATION,
        Error::Io(_) => UNRAVEL_ERR_IO,
        _ => UNRAVEL_ERR_NUMERIC,
    }
}

fn fail(err: &Error) -> i32 {
    set_last_error(&err.to_string());
    code_for(err)
}

/// Opaque experiment-configuration handle.
pub struct UnravelConfig {
    inner: ExperimentConfig,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn unravel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread (valid until the next
/// failing call on the same thread).
#[no_mangle]
pub extern "C" fn unravel_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse configuration text into a handle. On success writes the new handle
/// through `out` and returns UNRAVEL_OK; the handle must be released with
/// unravel_config_free.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn unravel_config_parse(
    text: *const c_char,
    out: *mut *mut UnravelConfig,
) -> i32 {
    if text.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return UNRAVEL_ERR_INVALID_ARGUMENT;
    }
    let text = match CStr::from_ptr(text).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_last_error("configuration text is not valid UTF-8");
            return UNRAVEL_ERR_INVALID_ARGUMENT;
        }
    };
    match parse_config(text) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(UnravelConfig { inner: cfg }));
            UNRAVEL_OK
        }
        Err(e) => fail(&e),
    }
}

/// Release a configuration handle. A null handle is a no-op.
///
/// # Safety
/// `cfg` must be a handle returned by unravel_config_parse, freed only once.
#[no_mangle]
pub unsafe extern "C" fn unravel_config_free(cfg: *mut UnravelConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Override the RNG master seed.
///
/// # Safety
/// `cfg` must be a live handle from unravel_config_parse.
#[no_mangle]
pub unsafe extern "C" fn unravel_config_set_seed(cfg: *mut UnravelConfig, seed: u64) -> i32 {
    match cfg.as_mut() {
        Some(handle) => {
            handle.inner.seed = seed;
            UNRAVEL_OK
        }
        None => {
            set_last_error("null configuration handle");
            UNRAVEL_ERR_INVALID_ARGUMENT
        }
    }
}

/// Override the output directory.
///
/// # Safety
/// `cfg` must be a live handle and `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn unravel_config_set_output_dir(
    cfg: *mut UnravelConfig,
    dir: *const c_char,
) -> i32 {
    let handle = match cfg.as_mut() {
        Some(h) => h,
        None => {
            set_last_error("null configuration handle");
            return UNRAVEL_ERR_INVALID_ARGUMENT;
        }
    };
    if dir.is_null() {
        set_last_error("null output directory");
        return UNRAVEL_ERR_INVALID_ARGUMENT;
    }
    match CStr::from_ptr(dir).to_str() {
        Ok(s) => {
            handle.inner.out_dir = Some(PathBuf::from(s));
            UNRAVEL_OK
        }
        Err(_) => {
            set_last_error("output directory is not valid UTF-8");
            UNRAVEL_ERR_INVALID_ARGUMENT
        }
    }
}

/// Dry-run validation of a parsed configuration.
///
/// # Safety
/// `cfg` must be a live handle from unravel_config_parse.
#[no_mangle]
pub unsafe extern "C" fn unravel_validate(cfg: *const UnravelConfig) -> i32 {
    match cfg.as_ref() {
        Some(handle) => match validate(&handle.inner) {
            Ok(_) => UNRAVEL_OK,
            Err(e) => fail(&e),
        },
        None => {
            set_last_error("null configuration handle");
            UNRAVEL_ERR_INVALID_ARGUMENT
        }
    }
}

/// Execute the configured experiment, writing CSV files to the configured
/// output directory.
///
/// # Safety
/// `cfg` must be a live handle from unravel_config_parse.
#[no_mangle]
pub unsafe extern "C" fn unravel_run(cfg: *const UnravelConfig) -> i32 {
    match cfg.as_ref() {
        Some(handle) => match run(&handle.inner) {
            Ok(_) => UNRAVEL_OK,
            Err(e) => fail(&e),
        },
        None => {
            set_last_error("null configuration handle");
            UNRAVEL_ERR_INVALID_ARGUMENT
        }
    }
}
