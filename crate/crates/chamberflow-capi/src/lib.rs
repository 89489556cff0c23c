//! C ABI over the chamberflow library. Handles are opaque pointers owned by
//! the caller and released through the matching `_free`; every entry point
//! returns a status code and structured results travel as JSON strings in
//! the library's deterministic 17-digit format. No call unwinds across the
//! boundary: panics are caught and reported as `CF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde_json::Value;

use chamberflow::classifier::LimitSummary;
use chamberflow::config::RunConfig;
use chamberflow::error::Error;
use chamberflow::flow::{Flow, RunStatus, Trajectory};
use chamberflow::report::to_json_17;
use chamberflow::{classifier, criterion};

/// Status codes returned by every fallible entry point. Nonzero means the
/// call failed and `cf_last_error` holds a message.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    CfStatusOk = 0,
    CfStatusNullArgument = 1,
    CfStatusInvalidUtf8 = 2,
    CfStatusConfig = 3,
    CfStatusGeometry = 4,
    CfStatusWall = 5,
    CfStatusDegeneracy = 6,
    CfStatusQuadrature = 7,
    CfStatusNumerical = 8,
    CfStatusInput = 9,
    CfStatusIo = 10,
    CfStatusPanic = 11,
}

/// Opaque run configuration.
pub struct CfConfig {
    inner: RunConfig,
}

/// Opaque finished trajectory.
pub struct CfTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::Config(_) => CfStatus::CfStatusConfig,
        Error::Geometry(_) => CfStatus::CfStatusGeometry,
        Error::Wall { .. } => CfStatus::CfStatusWall,
        Error::Degeneracy { .. } => CfStatus::CfStatusDegeneracy,
        Error::Quadrature(_) => CfStatus::CfStatusQuadrature,
        Error::Numerical(_) => CfStatus::CfStatusNumerical,
        Error::Input(_) => CfStatus::CfStatusInput,
        Error::Io(_) => CfStatus::CfStatusIo,
    }
}

fn fail(e: Error) -> CfStatus {
    set_error(&e.to_string());
    status_of(&e)
}

/// Runs `f` with panics converted to a status; the happy path stores its
/// result through the caller's out-pointer inside `f`.
fn guarded<F: FnOnce() -> CfStatus>(f: F) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            CfStatus::CfStatusPanic
        }
    }
}

/// Borrows a C string as UTF-8 or records the failure.
///
/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn utf8_in<'a>(ptr: *const c_char) -> Result<&'a str, CfStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(CfStatus::CfStatusNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CfStatus::CfStatusInvalidUtf8
    })
}

fn json_out(value: &Value, out: *mut *mut c_char) -> CfStatus {
    let text = match to_json_17(value) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let c = match CString::new(text) {
        Ok(c) => c,
        Err(_) => {
            set_error("result contains an interior NUL");
            return CfStatus::CfStatusNumerical;
        }
    };
    unsafe { *out = c.into_raw() };
    CfStatus::CfStatusOk
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Error> {
    serde_json::to_value(v).map_err(|e| Error::Numerical(format!("serialization: {e}")))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Frees a string returned through an out-pointer.
///
/// # Safety
/// `s` must be a pointer previously returned by this library, or null.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML config from text and validates it end to end.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_config_parse(
    text: *const c_char,
    out: *mut *mut CfConfig,
) -> CfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let text = match utf8_in(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match RunConfig::from_str(text).and_then(|c| c.assemble().map(|_| c)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(CfConfig { inner: cfg }));
        CfStatus::CfStatusOk
    })
}

/// Reads and parses a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_config_load(
    path: *const c_char,
    out: *mut *mut CfConfig,
) -> CfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let path = match utf8_in(path) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match RunConfig::parse(Path::new(path)).and_then(|c| c.assemble().map(|_| c)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(CfConfig { inner: cfg }));
        CfStatus::CfStatusOk
    })
}

/// # Safety
/// `cfg` must come from `cf_config_parse`/`cf_config_load`, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_config_free(cfg: *mut CfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn config_in<'a>(cfg: *const CfConfig) -> Result<&'a RunConfig, CfStatus> {
    if cfg.is_null() {
        set_error("null config handle");
        return Err(CfStatus::CfStatusNullArgument);
    }
    Ok(&(*cfg).inner)
}

fn criterion_value(cfg: &RunConfig) -> Result<Value, Error> {
    let asm = cfg.assemble()?;
    let pair = criterion::full_report(&asm.polytope, &asm.geometry)?;
    to_value(&pair)
}

/// Existence test at the origin plus the solved soliton vector and the
/// test there; the result lands in `out_json` as the same JSON object the
/// CLI writes under "criterion" (keys "ke" and "soliton").
///
/// # Safety
/// `cfg` must be a live config handle, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_criterion_run(
    cfg: *const CfConfig,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let cfg = match config_in(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match criterion_value(cfg) {
            Ok(v) => json_out(&v, out_json),
            Err(e) => fail(e),
        }
    })
}

fn flow_run(cfg: &RunConfig) -> Result<Trajectory, Error> {
    let asm = cfg.assemble()?;
    let flow_cfg = asm
        .flow
        .clone()
        .ok_or_else(|| Error::Config("flow needs a [grid] block in the config".into()))?;
    let flow = Flow::new(asm.geometry.clone(), &asm.polytope, flow_cfg)?;
    flow.run()
}

/// Integrates the flow and hands back an opaque trajectory handle.
///
/// # Safety
/// `cfg` must be a live config handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_flow_run(
    cfg: *const CfConfig,
    out: *mut *mut CfTrajectory,
) -> CfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let cfg = match config_in(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match flow_run(cfg) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(CfTrajectory { inner: t }));
                CfStatus::CfStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `traj` must come from `cf_flow_run`/`cf_trajectory_parse`, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_free(traj: *mut CfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

unsafe fn trajectory_in<'a>(traj: *const CfTrajectory) -> Result<&'a Trajectory, CfStatus> {
    if traj.is_null() {
        set_error("null trajectory handle");
        return Err(CfStatus::CfStatusNullArgument);
    }
    Ok(&(*traj).inner)
}

/// Serializes a trajectory (records, checkpoints, status) as JSON.
///
/// # Safety
/// `traj` must be a live trajectory handle, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_to_json(
    traj: *const CfTrajectory,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let traj = match trajectory_in(traj) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match to_value(traj) {
            Ok(v) => json_out(&v, out_json),
            Err(e) => fail(e),
        }
    })
}

/// Rebuilds a trajectory handle from JSON produced by
/// `cf_trajectory_to_json` (bit-exact round trip).
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_parse(
    text: *const c_char,
    out: *mut *mut CfTrajectory,
) -> CfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let text = match utf8_in(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str::<Trajectory>(text) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(CfTrajectory { inner: t }));
                CfStatus::CfStatusOk
            }
            Err(e) => {
                set_error(&format!("trajectory JSON: {e}"));
                CfStatus::CfStatusInput
            }
        }
    })
}

/// Classifies a finished run under the config's thresholds.
///
/// # Safety
/// `cfg` and `traj` must be live handles, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_classify_run(
    cfg: *const CfConfig,
    traj: *const CfTrajectory,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let cfg = match config_in(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let traj = match trajectory_in(traj) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let asm = match cfg.assemble() {
            Ok(a) => a,
            Err(e) => return fail(e),
        };
        match classifier::classify(&asm.geometry, traj, &cfg.thresholds)
            .and_then(|r| to_value(&r))
        {
            Ok(v) => json_out(&v, out_json),
            Err(e) => fail(e),
        }
    })
}

/// Degeneration data (root partition, generators, limit geometry) from an
/// explicit drift vector of length `len`.
///
/// # Safety
/// `cfg` must be a live handle, `y` must point to `len` doubles, `out_json`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_degenerate(
    cfg: *const CfConfig,
    y: *const f64,
    len: usize,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guarded(|| {
        if out_json.is_null() || (y.is_null() && len > 0) {
            set_error("null out pointer or drift vector");
            return CfStatus::CfStatusNullArgument;
        }
        let cfg = match config_in(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let y = std::slice::from_raw_parts(y, len);
        let result = cfg.assemble().and_then(|asm| {
            if y.len() != asm.rootsys.dim() {
                return Err(Error::Input(format!(
                    "drift vector has {} components, the chamber has dimension {}",
                    y.len(),
                    asm.rootsys.dim()
                )));
            }
            let (lie, limit_geom) =
                classifier::build_degeneration(&asm.rootsys, y, cfg.thresholds.tangency_tol)?;
            let mut m = serde_json::Map::new();
            m.insert("y".into(), to_value(&y.to_vec())?);
            m.insert("lie_data".into(), to_value(&lie)?);
            m.insert("limit".into(), to_value(&LimitSummary::of(&limit_geom))?);
            Ok(Value::Object(m))
        });
        match result {
            Ok(v) => json_out(&v, out_json),
            Err(e) => fail(e),
        }
    })
}

/// criterion, then flow, then classify, with the same cross-checks the CLI
/// appends; stages are skipped when no [grid] block or t_final = 0.
///
/// # Safety
/// `cfg` must be a live handle, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_pipeline_run(
    cfg: *const CfConfig,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer");
            return CfStatus::CfStatusNullArgument;
        }
        let cfg = match config_in(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match pipeline_value(cfg) {
            Ok(v) => json_out(&v, out_json),
            Err(e) => fail(e),
        }
    })
}

fn pipeline_value(cfg: &RunConfig) -> Result<Value, Error> {
    let asm = cfg.assemble()?;
    let mut m = serde_json::Map::new();

    let crit_v = criterion_value(cfg)?;
    let x: Vec<f64> = serde_json::from_value(crit_v["soliton"]["x"].clone())
        .map_err(|e| Error::Numerical(format!("criterion x: {e}")))?;
    m.insert("criterion".into(), crit_v);

    if asm.flow.is_none() || cfg.flow.t_final == 0.0 {
        m.insert("flow".into(), Value::String("skipped".into()));
        return Ok(Value::Object(m));
    }
    let traj = flow_run(cfg)?;
    m.insert("flow_status".into(), to_value(&traj.status)?);

    let cls = classifier::classify(&asm.geometry, &traj, &cfg.thresholds)?;
    m.insert("classification".into(), to_value(&cls)?);

    let converged = matches!(traj.status, RunStatus::Converged { .. });
    let (status, margins) =
        criterion::necessary_check(&asm.polytope, &asm.geometry, &x, Some(converged))?;
    let mut checks = serde_json::Map::new();
    checks.insert("necessary_status".into(), to_value(&status)?);
    checks.insert("necessary_margins".into(), to_value(&margins)?);
    m.insert("cross_checks".into(), Value::Object(checks));
    Ok(Value::Object(m))
}
