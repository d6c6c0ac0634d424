//! C ABI over `zonotrain`.
//!
//! Every function returns a [`ZtStatus`]; results come back through out
//! pointers. Objects are opaque handles created by `zt_*_new`/`zt_*_from_json`
//! (or returned by operations) and released with the matching `zt_*_free`.
//! On failure, `zt_last_error_message` returns a description that stays valid
//! until the next call on the same thread.
//!
//! Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use zonotrain::conzono::{affine_map, contains_point, intersect};
use zonotrain::training::{certify, Problem, TrainConfig};
use zonotrain::{network, ConstrainedZonotope, EmptinessStatus, Error, Network, ReachOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Parse = 4,
    Numerical = 5,
    BudgetExceeded = 6,
    Panic = 7,
}

/// Constrained zonotope handle.
pub struct ZtZonotope(ConstrainedZonotope);

/// Network handle.
pub struct ZtNetwork(Network);

/// Reachable-set handle (a list of constrained zonotope pieces).
pub struct ZtReachSet(zonotrain::ReachSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ZtStatus {
    match e {
        Error::DimensionMismatch(_) => ZtStatus::DimensionMismatch,
        Error::Json(_) | Error::Parse(_) => ZtStatus::Parse,
        Error::BranchBudget { .. } | Error::SplitTooLarge { .. } => ZtStatus::BudgetExceeded,
        e if e.is_numerical() => ZtStatus::Numerical,
        _ => ZtStatus::InvalidArgument,
    }
}

struct Fail(ZtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ZtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ZtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            ZtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ZtStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(ZtStatus::Parse, format!("{what} is not UTF-8: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = CString::new(s)
        .map_err(|_| Fail(ZtStatus::InvalidArgument, "string contains NUL".into()))?
        .into_raw();
    Ok(())
}

fn row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Description of the last failure on this thread (empty after success).
#[no_mangle]
pub extern "C" fn zt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn zt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `{c + G z : ‖z‖∞ ≤ 1, A z = b}` with `G` of size `dim × n_gen` and `A` of
/// size `n_con × n_gen`.
///
/// # Safety
/// Array arguments must hold the stated number of doubles (or be null when
/// that number is zero).
#[no_mangle]
pub unsafe extern "C" fn zt_cz_new(
    dim: usize,
    n_gen: usize,
    n_con: usize,
    c: *const f64,
    g: *const f64,
    a: *const f64,
    b: *const f64,
    out: *mut *mut ZtZonotope,
) -> ZtStatus {
    guard(|| {
        let c = DVector::from_column_slice(slice(c, dim, "c")?);
        let g = row_major(dim, n_gen, slice(g, dim * n_gen, "G")?);
        let a = row_major(n_con, n_gen, slice(a, n_con * n_gen, "A")?);
        let b = DVector::from_column_slice(slice(b, n_con, "b")?);
        put(out, ZtZonotope(ConstrainedZonotope::new(c, g, a, b)?))
    })
}

/// Parses `{"c": [...], "G": [[...]], "A": [[...]], "b": [...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_from_json(
    json: *const c_char,
    out: *mut *mut ZtZonotope,
) -> ZtStatus {
    guard(|| {
        let z: ConstrainedZonotope =
            serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        put(out, ZtZonotope(z))
    })
}

/// # Safety
/// `z` must be a live handle; the returned string is freed with `zt_string_free`.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_to_json(z: *const ZtZonotope, out: *mut *mut c_char) -> ZtStatus {
    guard(|| {
        let z = borrow(z, "zonotope")?;
        put_string(out, serde_json::to_string(&z.0).map_err(Error::from)?)
    })
}

/// # Safety
/// `z` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_free(z: *mut ZtZonotope) {
    if !z.is_null() {
        drop(Box::from_raw(z));
    }
}

/// Writes dimension, generator count and constraint count.
///
/// # Safety
/// `z` must be a live handle; out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_shape(
    z: *const ZtZonotope,
    dim: *mut usize,
    n_gen: *mut usize,
    n_con: *mut usize,
) -> ZtStatus {
    guard(|| {
        let z = &borrow(z, "zonotope")?.0;
        for (p, v) in [(dim, z.dim()), (n_gen, z.n_gen()), (n_con, z.n_con())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Image `W Z + w` with `W` of size `rows × dim(z)`.
///
/// # Safety
/// `w_mat` holds `rows * dim(z)` doubles and `w_vec` holds `rows`.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_affine(
    z: *const ZtZonotope,
    rows: usize,
    w_mat: *const f64,
    w_vec: *const f64,
    out: *mut *mut ZtZonotope,
) -> ZtStatus {
    guard(|| {
        let z = &borrow(z, "zonotope")?.0;
        let w = row_major(rows, z.dim(), slice(w_mat, rows * z.dim(), "W")?);
        let b = DVector::from_column_slice(slice(w_vec, rows, "w")?);
        put(out, ZtZonotope(affine_map(z, &w, &b)?))
    })
}

/// # Safety
/// `a` and `b` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_intersect(
    a: *const ZtZonotope,
    b: *const ZtZonotope,
    out: *mut *mut ZtZonotope,
) -> ZtStatus {
    guard(|| {
        let (a, b) = (
            &borrow(a, "first zonotope")?.0,
            &borrow(b, "second zonotope")?.0,
        );
        put(out, ZtZonotope(intersect(a, b)?))
    })
}

/// Emptiness LP. `v_star` receives the optimum (infinity when `A z = b` has
/// no solution) and `is_empty` receives 1 when the set is empty.
///
/// # Safety
/// `z` must be a live handle; out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_check_empty(
    z: *const ZtZonotope,
    v_star: *mut f64,
    is_empty: *mut c_int,
) -> ZtStatus {
    guard(|| {
        let res = borrow(z, "zonotope")?.0.check_empty()?;
        if let Some(v) = v_star.as_mut() {
            *v = match res.status {
                EmptinessStatus::Optimal => res.v_star,
                EmptinessStatus::EqInfeasible => f64::INFINITY,
            };
        }
        if let Some(e) = is_empty.as_mut() {
            *e = res.is_empty() as c_int;
        }
        Ok(())
    })
}

/// Membership of a point (length `dim(z)`) up to `tol`.
///
/// # Safety
/// `point` holds `dim(z)` doubles.
#[no_mangle]
pub unsafe extern "C" fn zt_cz_contains(
    z: *const ZtZonotope,
    point: *const f64,
    tol: f64,
    out: *mut c_int,
) -> ZtStatus {
    guard(|| {
        let z = &borrow(z, "zonotope")?.0;
        let p = DVector::from_column_slice(slice(point, z.dim(), "point")?);
        let inside = contains_point(z, &p, tol)?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = inside as c_int;
        Ok(())
    })
}

/// Parses `{"layers": [{"W": [[...]], "w": [...]}, ...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn zt_network_from_json(
    json: *const c_char,
    out: *mut *mut ZtNetwork,
) -> ZtStatus {
    guard(|| {
        let net: Network = serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        put(out, ZtNetwork(net))
    })
}

/// # Safety
/// `net` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn zt_network_free(net: *mut ZtNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn zt_network_shape(
    net: *const ZtNetwork,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> ZtStatus {
    guard(|| {
        let net = &borrow(net, "network")?.0;
        if let Some(p) = input_dim.as_mut() {
            *p = net.input_dim();
        }
        if let Some(p) = output_dim.as_mut() {
            *p = net.output_dim();
        }
        Ok(())
    })
}

/// # Safety
/// `x` holds `input_dim` doubles and `y` has room for `output_dim`.
#[no_mangle]
pub unsafe extern "C" fn zt_network_forward(
    net: *const ZtNetwork,
    x: *const f64,
    y: *mut f64,
) -> ZtStatus {
    guard(|| {
        let net = &borrow(net, "network")?.0;
        let x = DVector::from_column_slice(slice(x, net.input_dim(), "x")?);
        let out = net.forward(&x)?;
        if y.is_null() {
            return Err(null("y"));
        }
        std::slice::from_raw_parts_mut(y, out.len()).copy_from_slice(out.as_slice());
        Ok(())
    })
}

/// Exact reachable set of `input` with default options (pruning on).
///
/// # Safety
/// `net` and `input` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn zt_reach(
    net: *const ZtNetwork,
    input: *const ZtZonotope,
    out: *mut *mut ZtReachSet,
) -> ZtStatus {
    guard(|| {
        let net = &borrow(net, "network")?.0;
        let input = &borrow(input, "input set")?.0;
        put(
            out,
            ZtReachSet(network::reach(net, input, &ReachOptions::default())?),
        )
    })
}

/// # Safety
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_reach_len(r: *const ZtReachSet, len: *mut usize) -> ZtStatus {
    guard(|| {
        let r = &borrow(r, "reach set")?.0;
        *len.as_mut().ok_or_else(|| null("len"))? = r.len();
        Ok(())
    })
}

/// Copy of piece `index` as a new zonotope handle.
///
/// # Safety
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_reach_piece(
    r: *const ZtReachSet,
    index: usize,
    out: *mut *mut ZtZonotope,
) -> ZtStatus {
    guard(|| {
        let r = &borrow(r, "reach set")?.0;
        let piece = r.pieces.get(index).ok_or_else(|| {
            Fail(
                ZtStatus::InvalidArgument,
                format!("piece {index} out of range ({} pieces)", r.len()),
            )
        })?;
        put(out, ZtZonotope(piece.set.clone()))
    })
}

/// # Safety
/// `r` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn zt_reach_free(r: *mut ZtReachSet) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Reach + emptiness of every piece against every unsafe set. `safe`
/// receives 1 when no piece meets an unsafe set; `max_loss` receives the
/// largest `1 − v*`.
///
/// # Safety
/// `unsafe_sets` points to `n_unsafe` live handles.
#[no_mangle]
pub unsafe extern "C" fn zt_verify(
    net: *const ZtNetwork,
    input: *const ZtZonotope,
    unsafe_sets: *const *const ZtZonotope,
    n_unsafe: usize,
    safe: *mut c_int,
    max_loss: *mut f64,
) -> ZtStatus {
    guard(|| {
        let net = &borrow(net, "network")?.0;
        let input = borrow(input, "input set")?.0.clone();
        let handles: &[*const ZtZonotope] = if n_unsafe == 0 {
            &[]
        } else if unsafe_sets.is_null() {
            return Err(null("unsafe_sets"));
        } else {
            std::slice::from_raw_parts(unsafe_sets, n_unsafe)
        };
        let sets = handles
            .iter()
            .map(|&h| borrow(h, "unsafe set").map(|z| z.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let cert = certify(net, &Problem::new(input, sets), &TrainConfig::default())?;
        if let Some(s) = safe.as_mut() {
            *s = cert.safe as c_int;
        }
        if let Some(m) = max_loss.as_mut() {
            *m = cert.max_constraint_loss;
        }
        Ok(())
    })
}
