//! C interface to `qpeuler`.
//!
//! Objects are opaque handles created by `qp_*_new`-style calls and
//! released with the matching `qp_*_free`. Every fallible call returns a
//! [`QpStatus`]; on failure [`qp_last_error_message`] describes the error
//! for the calling thread. Arrays are passed as pointer plus length.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use num_complex::Complex64;
use qpeuler::operators::pressure_gradient;
use qpeuler::presets::random_divfree;
use qpeuler::solver::{integrate, EulerianState, SolverConfig};
use qpeuler::{check_nonresonance, FrequencyMatrix, ModeIndex, ModeSet, NormParams, QPScalar, QPVectorField, QpError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDimensions = 3,
    Resonant = 4,
    SolverAbort = 5,
    Panic = 6,
}

/// A truncated mode box with its frequency matrix.
pub struct QpModeSet(Arc<ModeSet>);

/// A real quasi-periodic vector field on a mode set.
pub struct QpField(QPVectorField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &QpError) -> QpStatus {
    match e {
        QpError::InvalidDimensions(_) | QpError::MismatchedModeSet | QpError::ModeOutOfBox(_) => {
            QpStatus::InvalidDimensions
        }
        QpError::Resonance { .. } => QpStatus::Resonant,
        QpError::DivergenceBreach { .. }
        | QpError::NonFinite { .. }
        | QpError::NewtonNonConvergence { .. }
        | QpError::SeriesTail { .. }
        | QpError::NonPositiveMargin(_) => QpStatus::SolverAbort,
        _ => QpStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F>(f: F) -> QpStatus
where
    F: FnOnce() -> Result<(), (QpStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QpStatus::Panic
        }
    }
}

fn fail(e: QpError) -> (QpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (QpStatus, String) {
    (QpStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (QpStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (QpStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), (QpStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the mode box `|m|_∞ ≤ radius` for the row-major `torus_dim × space_dim`
/// matrix `omega`.
///
/// # Safety
/// `omega` must point to `torus_dim * space_dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_modeset_new(
    torus_dim: usize,
    space_dim: usize,
    omega: *const f64,
    radius: u32,
    out: *mut *mut QpModeSet,
) -> QpStatus {
    guard(|| {
        let len = torus_dim
            .checked_mul(space_dim)
            .ok_or_else(|| (QpStatus::InvalidDimensions, "matrix size overflows".to_string()))?;
        let entries = slice(omega, len, "omega")?.to_vec();
        let matrix = FrequencyMatrix::new(torus_dim, space_dim, entries).map_err(fail)?;
        let ms = ModeSet::new(matrix, radius).map_err(fail)?;
        write(out, Box::into_raw(Box::new(QpModeSet(ms))), "out")
    })
}

/// # Safety
/// `ms` must be null or a handle from [`qp_modeset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qp_modeset_free(ms: *mut QpModeSet) {
    if !ms.is_null() {
        drop(Box::from_raw(ms));
    }
}

/// Number of modes in the box, or 0 for a null handle.
///
/// # Safety
/// `ms` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_modeset_len(ms: *const QpModeSet) -> usize {
    ms.as_ref().map_or(0, |m| m.0.len())
}

/// Smallest separation `|Λ_m − Λ_m'|` over distinct modes; `ok` is set to 1
/// when it is at least `tol`.
///
/// # Safety
/// `ms` must be a live handle; `ok` and `separation` writable or null.
#[no_mangle]
pub unsafe extern "C" fn qp_modeset_check_nonresonance(
    ms: *const QpModeSet,
    tol: f64,
    ok: *mut i32,
    separation: *mut f64,
) -> QpStatus {
    guard(|| {
        let ms = deref(ms, "ms")?;
        let report = check_nonresonance(&ms.0, tol);
        if !ok.is_null() {
            ok.write(report.ok as i32);
        }
        if !separation.is_null() {
            separation.write(report.worst_pair.map_or(f64::INFINITY, |p| p.2));
        }
        Ok(())
    })
}

/// The zero field with `space_dim` components.
///
/// # Safety
/// `ms` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_zero(ms: *const QpModeSet, out: *mut *mut QpField) -> QpStatus {
    guard(|| {
        let ms = deref(ms, "ms")?;
        write(out, Box::into_raw(Box::new(QpField(QPVectorField::zero(&ms.0)))), "out")
    })
}

/// Seeded random divergence-free field on `|m|_∞ ≤ sub_radius` with
/// `‖u‖_{0,s} = amplitude`.
///
/// # Safety
/// `ms` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_random_divfree(
    ms: *const QpModeSet,
    seed: u64,
    sub_radius: u32,
    amplitude: f64,
    s: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guard(|| {
        let ms = deref(ms, "ms")?;
        let u = random_divfree(&ms.0, seed, sub_radius, amplitude, s).map_err(fail)?;
        write(out, Box::into_raw(Box::new(QpField(u))), "out")
    })
}

/// # Safety
/// `f` must be null or a live field handle.
#[no_mangle]
pub unsafe extern "C" fn qp_field_free(f: *mut QpField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

fn mode_of(ms: &ModeSet, m: &[i32]) -> Result<ModeIndex, (QpStatus, String)> {
    if m.len() != ms.torus_dim() {
        return Err((
            QpStatus::InvalidDimensions,
            format!("mode has {} entries, expected {}", m.len(), ms.torus_dim()),
        ));
    }
    let idx = ModeIndex::new(m.to_vec());
    if ms.slot(&idx).is_none() {
        return Err(fail(QpError::ModeOutOfBox(m.to_vec())));
    }
    Ok(idx)
}

fn component_index(u: &QPVectorField, component: usize) -> Result<usize, (QpStatus, String)> {
    if component >= u.dim() {
        return Err((
            QpStatus::InvalidDimensions,
            format!("component {component} out of range for {} components", u.dim()),
        ));
    }
    Ok(component)
}

/// Sets `û_{component, m} = re + i·im` and its partner `û_{component, −m}`
/// to the conjugate. For `m = 0` the imaginary part must vanish.
///
/// # Safety
/// `f` must be a live handle; `m` must point to `m_len` ints.
#[no_mangle]
pub unsafe extern "C" fn qp_field_set_mode(
    f: *mut QpField,
    m: *const i32,
    m_len: usize,
    component: usize,
    re: f64,
    im: f64,
) -> QpStatus {
    guard(|| {
        let f = f.as_mut().ok_or_else(|| null("f"))?;
        let ms = f.0.modes().clone();
        let idx = mode_of(&ms, slice(m, m_len, "m")?)?;
        let j = component_index(&f.0, component)?;
        let target = Complex64::new(re, im);
        let delta = target - f.0.components()[j].coefficient(&idx);
        let entries = if idx.max_norm() == 0 {
            if im != 0.0 {
                return Err((QpStatus::InvalidArgument, "the mean of a real field is real".into()));
            }
            vec![(idx, delta)]
        } else {
            vec![(idx.neg(), delta.conj()), (idx, delta)]
        };
        let bump = QPScalar::from_modes(&ms, entries).map_err(fail)?;
        let mut comps = f.0.components().to_vec();
        comps[j] = comps[j].add(&bump).map_err(fail)?;
        f.0 = QPVectorField::new(comps).map_err(fail)?;
        Ok(())
    })
}

/// Reads `û_{component, m}`.
///
/// # Safety
/// `f` must be a live handle; `m` must point to `m_len` ints; `re`, `im` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_coefficient(
    f: *const QpField,
    m: *const i32,
    m_len: usize,
    component: usize,
    re: *mut f64,
    im: *mut f64,
) -> QpStatus {
    guard(|| {
        let f = deref(f, "f")?;
        let idx = mode_of(f.0.modes(), slice(m, m_len, "m")?)?;
        let j = component_index(&f.0, component)?;
        let c = f.0.components()[j].coefficient(&idx);
        write(re, c.re, "re")?;
        write(im, c.im, "im")
    })
}

/// Evaluates the field at `x` (`x_len = space_dim`) into `out`
/// (`out_len = space_dim`).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn qp_field_evaluate(
    f: *const QpField,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> QpStatus {
    guard(|| {
        let f = deref(f, "f")?;
        let n = f.0.modes().space_dim();
        if x_len != n || out_len != f.0.dim() {
            return Err((
                QpStatus::InvalidDimensions,
                format!("point needs {n} coordinates and output {} slots", f.0.dim()),
            ));
        }
        let v = f.0.evaluate(slice(x, x_len, "x")?);
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&v);
        Ok(())
    })
}

/// Averaged energy `½ Σ |û_m|²`.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_energy(f: *const QpField, out: *mut f64) -> QpStatus {
    guard(|| write(out, deref(f, "f")?.0.energy(), "out"))
}

/// `‖div u‖_0`.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_divergence_norm(f: *const QpField, out: *mut f64) -> QpStatus {
    guard(|| write(out, deref(f, "f")?.0.divergence().l2_norm(), "out"))
}

/// The pressure term `𝒫(u)` as a new field.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_field_pressure_gradient(f: *const QpField, out: *mut *mut QpField) -> QpStatus {
    guard(|| {
        let p = pressure_gradient(&deref(f, "f")?.0).map_err(fail)?;
        write(out, Box::into_raw(Box::new(QpField(p))), "out")
    })
}

/// Integrates the Euler equation with RK4 from `u` over `[0, t_end]` with
/// step `dt`, aborting when `‖div u‖_0` exceeds `div_tol`. On success `out`
/// receives the final field; on [`QpStatus::SolverAbort`] it receives the
/// last state reached and `t_reached` its time.
///
/// # Safety
/// `u` must be a live handle; `out` writable; `t_reached` writable or null.
#[no_mangle]
pub unsafe extern "C" fn qp_euler_integrate(
    u: *const QpField,
    dt: f64,
    t_end: f64,
    div_tol: f64,
    out: *mut *mut QpField,
    t_reached: *mut f64,
) -> QpStatus {
    guard(|| {
        let u = deref(u, "u")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ms = u.0.modes();
        let s = (ms.torus_dim() / 2) as f64 + 1.0;
        let norm = NormParams::new(0, s, ms.torus_dim()).map_err(fail)?;
        let mut config = SolverConfig::new(dt, t_end, norm);
        config.div_tol = div_tol;
        let outcome = integrate(EulerianState { t: 0.0, u: u.0.clone() }, &config).map_err(fail)?;
        if !t_reached.is_null() {
            t_reached.write(outcome.state.t);
        }
        out.write(Box::into_raw(Box::new(QpField(outcome.state.u))));
        match outcome.abort {
            None => Ok(()),
            Some(e) => Err(fail(e)),
        }
    })
}
