//! C interface to `mjctrl`.
//!
//! Models are opaque handles. Every call returns an [`MjctrlStatus`]; on failure
//! the message is available from [`mjctrl_last_error`] on the same thread.
//! Matrices are written row-major into caller-provided buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mjctrl::model::{parse_model, Model};
use mjctrl::{bsrds, fixtures, linalg, pathspace, report, Error, Vector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MjctrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Parse = 4,
    Capacity = 5,
    SingularCoefficient = 6,
    Unsupported = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Io = 10,
    Panic = 11,
}

/// Opaque model handle.
pub struct MjctrlModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MjctrlStatus {
    match e {
        Error::Validation { .. } | Error::Dimension(_) => MjctrlStatus::Validation,
        Error::Parse { .. } => MjctrlStatus::Parse,
        Error::Capacity { .. } => MjctrlStatus::Capacity,
        Error::SingularCoefficient { .. } => MjctrlStatus::SingularCoefficient,
        Error::UnsupportedScheme(_) => MjctrlStatus::Unsupported,
        Error::Numerical(_) => MjctrlStatus::Numerical,
        Error::Io(_) => MjctrlStatus::Io,
    }
}

enum Fail {
    Status(MjctrlStatus, String),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MjctrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MjctrlStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MjctrlStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(MjctrlStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(MjctrlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a>(p: *const MjctrlModel) -> Result<&'a Model, Fail> {
    p.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn write_matrix(m: &mjctrl::Mat, out: *mut f64, len: usize) -> Result<(), Fail> {
    let data = linalg::to_row_major(m);
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < data.len() {
        return Err(Fail::Status(
            MjctrlStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

unsafe fn put<T>(p: *mut T, v: T) {
    if !p.is_null() {
        *p = v;
    }
}

unsafe fn store_model(model: Model, out: *mut *mut MjctrlModel) {
    *out = Box::into_raw(Box::new(MjctrlModel { model }));
}

/// Parses a TOML model.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_model_from_str(toml: *const c_char, out: *mut *mut MjctrlModel) -> MjctrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let src = read_str(toml, "toml")?;
        store_model(parse_model(src)?, out);
        Ok(())
    })
}

/// Loads a bundled model by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_model_from_fixture(name: *const c_char, out: *mut *mut MjctrlModel) -> MjctrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let name = read_str(name, "name")?;
        store_model(fixtures::load(name.trim_start_matches('@'))?, out);
        Ok(())
    })
}

/// # Safety
/// `model` must come from one of the constructors and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_model_free(model: *mut MjctrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State, control and trend dimensions and the horizon. Any output may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_model_dims(
    model: *const MjctrlModel,
    m: *mut usize,
    d: *mut usize,
    p: *mut usize,
    horizon: *mut usize,
) -> MjctrlStatus {
    guard(|| {
        let s = &handle(model)?.system;
        put(m, s.m());
        put(d, s.d());
        put(p, s.p());
        put(horizon, s.horizon);
        Ok(())
    })
}

/// Limiting controllability metric P0 from the Riccati scheme.
///
/// `p0` receives m·m values. `null_controllable` is 1, 0, or −1 when the
/// ε-trace did not stabilize.
///
/// # Safety
/// `model` must be a live handle; `p0` must hold `len` doubles; other outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_metric(
    model: *const MjctrlModel,
    p0: *mut f64,
    len: usize,
    rank: *mut usize,
    lambda_min: *mut f64,
    null_controllable: *mut i32,
) -> MjctrlStatus {
    guard(|| {
        let mdl = handle(model)?;
        let r = bsrds::metric_limit(&mdl.system, &mdl.tolerances)?;
        write_matrix(&r.p0_limit, p0, len)?;
        put(rank, r.rank);
        put(lambda_min, r.lambda_min);
        put(null_controllable, r.null_controllable.map_or(-1, i32::from));
        Ok(())
    })
}

/// Path-space decisions. Any output may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_oracle(
    model: *const MjctrlModel,
    null_controllable: *mut bool,
    approx_controllable: *mut bool,
    max_relative_residual: *mut f64,
) -> MjctrlStatus {
    guard(|| {
        let mdl = handle(model)?;
        let o = report::oracle_section(&mdl.system, &mdl.tolerances)?;
        put(null_controllable, o.null_controllable);
        put(approx_controllable, o.approx_controllable);
        put(max_relative_residual, o.max_relative_residual);
        Ok(())
    })
}

/// Squared controllability norm of `y0` (length m), computed exactly on the path tree.
///
/// # Safety
/// `model` must be a live handle, `y0` must hold `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_ctrl_norm_sq(
    model: *const MjctrlModel,
    y0: *const f64,
    len: usize,
    out: *mut f64,
) -> MjctrlStatus {
    guard(|| {
        let mdl = handle(model)?;
        if y0.is_null() {
            return Err(null("y0"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let m = mdl.system.m();
        if len != m {
            return Err(Error::validation("y0", format!("expected {m} entries, got {len}")).into());
        }
        let y = Vector::from_column_slice(std::slice::from_raw_parts(y0, len));
        let tree = mdl.system.tree_with_cap(mdl.tolerances.node_cap)?;
        let (v, _) = pathspace::ctrl_norm_sq(&mdl.system, &y, &tree, &mdl.tolerances)?;
        *out = v;
        Ok(())
    })
}

/// Noise-free Gramian p_0^N; `horizon` 0 means the model horizon.
///
/// # Safety
/// `model` must be a live handle; `out` must hold `len` doubles; `rank` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_gramian(
    model: *const MjctrlModel,
    horizon: usize,
    out: *mut f64,
    len: usize,
    rank: *mut usize,
) -> MjctrlStatus {
    guard(|| {
        let mdl = handle(model)?;
        let n = (horizon > 0).then_some(horizon);
        let g = report::gramian_only(&mdl.system, n, &mdl.tolerances)?;
        write_matrix(&g.matrix.to_mat(), out, len)?;
        put(rank, g.rank);
        Ok(())
    })
}

/// Full analysis report as JSON. Free the string with [`mjctrl_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_analyze_json(model: *const MjctrlModel, out: *mut *mut c_char) -> MjctrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mdl = handle(model)?;
        let json = report::analyze(mdl, &mdl.tolerances)?.to_json()?;
        *out = CString::new(json).map_err(|e| Error::Numerical(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mjctrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn mjctrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
