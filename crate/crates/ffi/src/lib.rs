//! C ABI over the vidquery engine.
//!
//! Every fallible function returns a [`VqStatus`]. On failure the message is
//! kept per thread and read with [`vq_last_error_message`]. Strings handed out
//! by this library are released with [`vq_string_free`]; engines with
//! [`vq_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vidquery::frameql::{self, parse};
use vidquery::proxy::LabeledSplit;
use vidquery::tracestore::load_trace;
use vidquery::{Engine, EngineConfig, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Trace = 5,
    Config = 6,
    Query = 7,
    Panic = 8,
}

/// Opaque engine bound to one loaded trace.
pub struct VqEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> VqStatus {
    match e {
        Error::Parse(_) => VqStatus::Parse,
        Error::Io(_) => VqStatus::Io,
        Error::Trace(_) | Error::Format { .. } => VqStatus::Trace,
        _ => VqStatus::Query,
    }
}

#[derive(Debug)]
struct Failure(VqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VqStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VqStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(VqStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(VqStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(VqStatus::Query, "output contains NUL".to_string()))?;
    // SAFETY: `out` was checked non-null by the caller of this helper.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn parse_config(text: &str) -> Result<EngineConfig, Failure> {
    let mut cfg = EngineConfig::default();
    for kv in text.split([',', ';', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or(Failure(VqStatus::Config, format!("expected key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure(VqStatus::Config, e.to_string()))?;
    }
    Ok(cfg)
}

/// Loads a JSONL trace and builds an engine over it.
///
/// `config` is null or a list of `key=value` pairs separated by `,`, `;` or
/// newlines. The train and held-out fractions select the labeled prefix;
/// queries run on the remainder. On success `*out` owns a new engine.
///
/// # Safety
/// `path` and `config` are null or NUL-terminated strings. `out` is a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn vq_engine_open(
    path: *const c_char,
    train_fraction: f64,
    heldout_fraction: f64,
    config: *const c_char,
    out: *mut *mut VqEngine,
) -> VqStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(VqStatus::NullArgument, "`out` is null".into()));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let cfg = if config.is_null() { EngineConfig::default() } else { parse_config(str_arg(config, "config")?)? };
        let trace = load_trace(path).map_err(Error::from)?;
        let split = LabeledSplit::fractions(trace.len(), train_fraction, heldout_fraction).map_err(Error::from)?;
        let engine = Engine::new(trace, split, cfg)?;
        *out = Box::into_raw(Box::new(VqEngine { engine }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or was returned by [`vq_engine_open`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vq_engine_free(engine: *mut VqEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of frames in the engine's trace, or 0 for null.
///
/// # Safety
/// `engine` is null or a live engine.
#[no_mangle]
pub unsafe extern "C" fn vq_engine_frame_count(engine: *const VqEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.engine.trace().len())
}

/// Runs one FrameQL query and stores its JSON report in `*out_json`.
///
/// # Safety
/// `engine` is a live engine, `sql` a NUL-terminated string and `out_json` a
/// valid pointer. The returned string is freed with [`vq_string_free`].
#[no_mangle]
pub unsafe extern "C" fn vq_engine_query(
    engine: *const VqEngine,
    sql: *const c_char,
    out_json: *mut *mut c_char,
) -> VqStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure(VqStatus::NullArgument, "`out_json` is null".into()));
        }
        *out_json = ptr::null_mut();
        let engine = engine.as_ref().ok_or(Failure(VqStatus::NullArgument, "`engine` is null".to_string()))?;
        let sql = str_arg(sql, "sql")?;
        let q = parse(sql).map_err(Error::from)?;
        let report = engine.engine.run(&q)?;
        out_string(report.to_json(), out_json)
    })
}

/// Parses FrameQL and stores its canonical text in `*out`.
///
/// # Safety
/// `sql` is a NUL-terminated string and `out` a valid pointer. The returned
/// string is freed with [`vq_string_free`].
#[no_mangle]
pub unsafe extern "C" fn vq_parse_canonical(sql: *const c_char, out: *mut *mut c_char) -> VqStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(VqStatus::NullArgument, "`out` is null".into()));
        }
        *out = ptr::null_mut();
        let q = parse(str_arg(sql, "sql")?).map_err(Error::from)?;
        out_string(frameql::print(&q), out)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next call into this library on the same
/// thread and must not be freed.
#[no_mangle]
pub extern "C" fn vq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
