//! C ABI over the gpob solvers. Every entry point returns a `GpobStatus`;
//! results come back through out-pointers, and the message of the last
//! failure on the calling thread is available from `gpob_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use gpob::flow::{flow_newton_config, local_mach_speed, solve_potential_flow, FlowParams, FlowSolution};
use gpob::grid::{Grid2D, GridSpec, ObstacleShape};
use gpob::vortex::{solve_gl_profile, HalfPlaneGrid};
use gpob::wave::{ansatz_seed, solve_traveling_wave, tw_newton_config, TravelingWave};
use gpob::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpobStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonConvergence = 3,
    BadGeometry = 4,
    EllipticityLoss = 5,
    BufferTooSmall = 6,
    Internal = 7,
    Panic = 8,
    Io = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpobShape {
    Disk = 0,
    Ellipse = 1,
}

/// Converged potential flow on its grid.
pub struct GpobFlow {
    inner: FlowSolution,
}

/// Converged traveling wave on its half-plane grid.
pub struct GpobWave {
    inner: TravelingWave,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> GpobStatus {
    use GpobStatus as S;
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::DomainError(_) | Error::SpeedOutOfRange(_) | Error::Config(_) => S::InvalidArgument,
        Error::NonConvergence { .. }
        | Error::LineSearchStall { .. }
        | Error::SeedFailure(_)
        | Error::VortexEscape
        | Error::VortexContamination { .. }
        | Error::AmbiguousCore { .. }
        | Error::EigenIterationFailure(_) => S::NonConvergence,
        Error::BadGeometry(_) | Error::InsufficientRange(_) | Error::UnderResolved(_) => S::BadGeometry,
        Error::EllipticityLoss { .. } => S::EllipticityLoss,
        Error::MissingArtifact(_) | Error::Format(_) | Error::Io(_) => S::Io,
        Error::SingularPreconditioner(_) | Error::LinearSolveFailure(_) | Error::GramSingular(_) => S::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), GpobStatus>) -> GpobStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpobStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside gpob".into());
            GpobStatus::Panic
        }
    }
}

fn fail(e: Error) -> GpobStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> GpobStatus {
    set_error(format!("null pointer: {what}"));
    GpobStatus::NullPointer
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn gpob_status_string(status: GpobStatus) -> *const c_char {
    let s: &'static CStr = match status {
        GpobStatus::Ok => c"ok",
        GpobStatus::NullPointer => c"null pointer",
        GpobStatus::InvalidArgument => c"invalid argument",
        GpobStatus::NonConvergence => c"no convergence",
        GpobStatus::BadGeometry => c"bad geometry",
        GpobStatus::EllipticityLoss => c"ellipticity lost",
        GpobStatus::BufferTooSmall => c"buffer too small",
        GpobStatus::Internal => c"internal error",
        GpobStatus::Panic => c"panic",
        GpobStatus::Io => c"i/o or format error",
    };
    s.as_ptr()
}

/// Copies the last error message of this thread (NUL-terminated, truncated
/// to `len`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gpob_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Speed c = 2b/√(1 − b²) of the limiting wave for a local speed² `b2`.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn gpob_local_mach_speed(b2: f64, out: *mut f64) -> GpobStatus {
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        *out = local_mach_speed(b2).map_err(fail)?;
        Ok(())
    })
}

/// Solves the potential flow at far-field speed `delta` past a disk
/// (`a` = radius) or an ellipse with semi-axes (`a`, `b`).
///
/// # Safety
/// `out` must be null or valid for a write; on success `*out` owns a handle
/// to release with `gpob_flow_free`.
#[no_mangle]
pub unsafe extern "C" fn gpob_flow_solve(
    shape: GpobShape,
    a: f64,
    b: f64,
    n_radial: usize,
    n_angular: usize,
    r_far: f64,
    stretch: f64,
    delta: f64,
    out: *mut *mut GpobFlow,
) -> GpobStatus {
    if out.is_null() {
        return null("out");
    }
    *out = std::ptr::null_mut();
    guard(|| {
        let shape = match shape {
            GpobShape::Disk => ObstacleShape::disk(a),
            GpobShape::Ellipse => ObstacleShape::ellipse(a, b),
        };
        let grid = Grid2D::build(GridSpec::new(shape, n_radial, n_angular, r_far, stretch)).map_err(fail)?;
        let sol = solve_potential_flow(Arc::new(grid), FlowParams { delta, epsilon: 0.1 }, None, &flow_newton_config()).map_err(fail)?;
        *out = Box::into_raw(Box::new(GpobFlow { inner: sol }));
        Ok(())
    })
}

/// # Safety
/// `flow` must be null or a handle from `gpob_flow_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpob_flow_free(flow: *mut GpobFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Maximum of |∇Φ|² on the obstacle boundary.
///
/// # Safety
/// `flow` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn gpob_flow_max_boundary_speed2(flow: *const GpobFlow, out: *mut f64) -> GpobStatus {
    if flow.is_null() || out.is_null() {
        return null("flow or out");
    }
    *out = (*flow).inner.max_boundary_speed2;
    GpobStatus::Ok
}

/// Grid dimensions (radial, angular).
///
/// # Safety
/// `flow` must be a live handle; both out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpob_flow_shape(flow: *const GpobFlow, n_radial: *mut usize, n_angular: *mut usize) -> GpobStatus {
    if flow.is_null() || n_radial.is_null() || n_angular.is_null() {
        return null("flow or out");
    }
    let g = &(*flow).inner.grid;
    *n_radial = g.n_radial();
    *n_angular = g.n_angular();
    GpobStatus::Ok
}

/// Copies Φ (radial index outermost) into `buf` of length `len`.
///
/// # Safety
/// `flow` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gpob_flow_copy_phi(flow: *const GpobFlow, buf: *mut f64, len: usize) -> GpobStatus {
    if flow.is_null() || buf.is_null() {
        return null("flow or buf");
    }
    let phi = &(*flow).inner.phi;
    if len < phi.len() {
        set_error(format!("buffer holds {len} values, need {}", phi.len()));
        return GpobStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(phi.as_ptr(), buf, phi.len());
    GpobStatus::Ok
}

/// Traveling wave at speed `c` on the half-plane box [0, L] × [−L, L] with
/// spacing `h`, from the vortex-pair ansatz.
///
/// # Safety
/// `out` must be null or valid for a write; on success `*out` owns a handle
/// to release with `gpob_wave_free`.
#[no_mangle]
pub unsafe extern "C" fn gpob_wave_solve(c: f64, box_size: f64, h: f64, out: *mut *mut GpobWave) -> GpobStatus {
    if out.is_null() {
        return null("out");
    }
    *out = std::ptr::null_mut();
    guard(|| {
        let g = HalfPlaneGrid::half_plane(box_size, box_size, h).map_err(fail)?;
        let p = solve_gl_profile(40.0, 2000).map_err(fail)?;
        let w = solve_traveling_wave(c, &ansatz_seed(&p, c, &g), &g, &tw_newton_config()).map_err(fail)?;
        *out = Box::into_raw(Box::new(GpobWave { inner: w }));
        Ok(())
    })
}

/// # Safety
/// `wave` must be null or a handle from `gpob_wave_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpob_wave_free(wave: *mut GpobWave) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

/// y₁ of the +1 vortex and the final residual norm.
///
/// # Safety
/// `wave` must be a live handle; both out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpob_wave_core(wave: *const GpobWave, d_c: *mut f64, residual: *mut f64) -> GpobStatus {
    if wave.is_null() || d_c.is_null() || residual.is_null() {
        return null("wave or out");
    }
    let w = &(*wave).inner;
    *d_c = w.d_c;
    *residual = w.residual_norm;
    GpobStatus::Ok
}
