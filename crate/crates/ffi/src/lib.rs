//! C interface to the space-time solver.
//!
//! Objects are exposed as opaque handles created by `*_new` functions and
//! released by the matching `*_free`. Every fallible call returns a
//! [`StmgStatus`]; the message of the most recent failure on the calling
//! thread is available through [`stmg_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use stmg::multigrid::{MgConfig, MgHierarchy, SmootherConfig};
use stmg::slab_inverse::Strategy;
use stmg::spacetime::{global_norm, Manufactured, SpaceTimeSystem, UniformSetup};
use stmg::spatial_solvers::SpdMethod;
use stmg::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Inadmissible = 3,
    NotConverged = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Slab inverse used by the smoother.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmgStrategy {
    Direct = 0,
    Diag = 1,
    CSchur = 2,
    RSchur = 3,
}

impl From<StmgStrategy> for Strategy {
    fn from(s: StmgStrategy) -> Self {
        match s {
            StmgStrategy::Direct => Strategy::Direct,
            StmgStrategy::Diag => Strategy::Diag,
            StmgStrategy::CSchur => Strategy::CSchur,
            StmgStrategy::RSchur => Strategy::RSchur,
        }
    }
}

/// Manufactured problem supplying source and initial data.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmgProblem {
    /// `u = exp(-t) prod sin(pi x_k)`
    SineExp = 0,
    /// `u = prod x_k (1 - x_k)`
    Quadratic = 1,
    /// Homogeneous data.
    Zero = 2,
}

/// Uniform discretization of `[0, 1]^dim x [t0, t0 + n_slabs * slab_length]`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct StmgSetup {
    pub dim: u32,
    pub p_space: u32,
    pub nel_space: u32,
    pub p_time: u32,
    pub nel_time: u32,
    pub n_slabs: u32,
    pub slab_length: f64,
    pub theta: f64,
    pub t0: f64,
    pub problem: StmgProblem,
}

/// Multigrid parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct StmgMgOptions {
    pub strategy: StmgStrategy,
    pub omega: f64,
    pub pre_sweeps: u32,
    pub post_sweeps: u32,
    pub inner_tol: f64,
    pub coarse_cap: u32,
    pub tol: f64,
    pub max_cycles: u32,
}

/// Outcome of a multigrid solve.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct StmgSolveInfo {
    pub iterations: u32,
    pub converged: bool,
    pub relative_residual: f64,
    pub seconds: f64,
}

/// Assembled space-time system.
pub struct StmgSystem {
    inner: SpaceTimeSystem,
    problem: Manufactured,
}

/// Multigrid hierarchy built on a system.
pub struct StmgMg {
    inner: MgHierarchy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> StmgStatus {
    match err {
        Error::Slab { source, .. } | Error::Eigen { source, .. } => status_of(source),
        Error::Parameter(_)
        | Error::Domain { .. }
        | Error::Nesting(_)
        | Error::Geometry(_)
        | Error::Interface { .. }
        | Error::Dimension { .. }
        | Error::Config(_)
        | Error::Schedule(_) => StmgStatus::InvalidArgument,
        Error::Admissibility(_) | Error::Conditioning { .. } => StmgStatus::Inadmissible,
        Error::Convergence { .. } | Error::Stagnation { .. } => StmgStatus::NotConverged,
        Error::Io(_) => StmgStatus::Io,
        _ => StmgStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into a status and the thread's
/// last error message.
fn guard(f: impl FnOnce() -> Result<(), (StmgStatus, String)>) -> StmgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            StmgStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            StmgStatus::Panic
        }
    }
}

fn lift(e: Error) -> (StmgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StmgStatus, String) {
    (StmgStatus::NullPointer, format!("{what} is null"))
}

fn convert_setup(s: &StmgSetup) -> (UniformSetup, Manufactured) {
    let dim = s.dim as usize;
    let problem = match s.problem {
        StmgProblem::SineExp => Manufactured::SineExp { dim },
        StmgProblem::Quadratic => Manufactured::Quadratic { dim },
        StmgProblem::Zero => Manufactured::Zero,
    };
    let setup = UniformSetup {
        dim,
        p_space: s.p_space as usize,
        nel_space: s.nel_space as usize,
        p_time: s.p_time as usize,
        nel_time: s.nel_time as usize,
        n_slabs: s.n_slabs as usize,
        slab_length: s.slab_length,
        theta: s.theta,
        t0: s.t0,
    };
    (setup, problem)
}

fn split(sys: &SpaceTimeSystem, flat: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(sys.n_slabs());
    let mut at = 0;
    for op in &sys.slabs {
        out.push(flat[at..at + op.size()].to_vec());
        at += op.size();
    }
    out
}

fn join(parts: &[Vec<f64>], out: &mut [f64]) {
    let mut at = 0;
    for p in parts {
        out[at..at + p.len()].copy_from_slice(p);
        at += p.len();
    }
}

unsafe fn input<'a>(
    ptr: *const f64,
    len: usize,
    expected: usize,
    what: &str,
) -> Result<&'a [f64], (StmgStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err((
            StmgStatus::InvalidArgument,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(
    ptr: *mut f64,
    len: usize,
    expected: usize,
    what: &str,
) -> Result<&'a mut [f64], (StmgStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err((
            StmgStatus::InvalidArgument,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stmg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes (without terminator) of the last error message, 0 if none.
#[no_mangle]
pub extern "C" fn stmg_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes). Returns the number of bytes written without the
/// terminator, or -1 if `buf` is null or `len` is 0.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn stmg_last_error_message(buf: *mut c_char, len: usize) -> i32 {
    if buf.is_null() || len == 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n as i32
    })
}

/// Default multigrid options.
#[no_mangle]
pub extern "C" fn stmg_mg_options_default() -> StmgMgOptions {
    let c = MgConfig::default();
    StmgMgOptions {
        strategy: StmgStrategy::RSchur,
        omega: c.smoother.omega,
        pre_sweeps: c.smoother.pre_sweeps as u32,
        post_sweeps: c.smoother.post_sweeps as u32,
        inner_tol: c.smoother.inner_tol,
        coarse_cap: c.coarse_cap as u32,
        tol: c.tol,
        max_cycles: c.max_cycles as u32,
    }
}

/// Assembles a uniform space-time system.
///
/// # Safety
/// `setup` must be valid for reads and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_new(setup: *const StmgSetup, out: *mut *mut StmgSystem) -> StmgStatus {
    guard(|| {
        let setup = setup.as_ref().ok_or_else(|| null("setup"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (s, problem) = convert_setup(setup);
        let inner = SpaceTimeSystem::uniform(&s, Some(&problem)).map_err(lift)?;
        *out = Box::into_raw(Box::new(StmgSystem { inner, problem }));
        Ok(())
    })
}

/// Releases a system; null is ignored.
///
/// # Safety
/// `sys` must come from [`stmg_system_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_free(sys: *mut StmgSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Total number of unknowns, 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_n_dofs(sys: *const StmgSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.n_dofs())
}

/// Copies the assembled right-hand side into `rhs`.
///
/// # Safety
/// `rhs` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_rhs(sys: *const StmgSystem, rhs: *mut f64, len: usize) -> StmgStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("system"))?;
        let out = output(rhs, len, s.inner.n_dofs(), "rhs")?;
        join(&s.inner.rhs, out);
        Ok(())
    })
}

/// Solves `L u = f` exactly by forward substitution over the slabs.
///
/// # Safety
/// `f` and `u` must hold `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_solve_sequential(
    sys: *const StmgSystem,
    f: *const f64,
    u: *mut f64,
    len: usize,
) -> StmgStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("system"))?;
        let n = s.inner.n_dofs();
        let f = split(&s.inner, input(f, len, n, "f")?);
        let inv = s.inner.direct_inverses().map_err(lift)?;
        let sol = s.inner.sequential_solve_with(&inv, &f).map_err(lift)?;
        join(&sol, output(u, len, n, "u")?);
        Ok(())
    })
}

/// Euclidean norm of `f - L u`.
///
/// # Safety
/// `u` and `f` must hold `len` doubles each; `norm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_residual_norm(
    sys: *const StmgSystem,
    u: *const f64,
    f: *const f64,
    len: usize,
    norm: *mut f64,
) -> StmgStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("system"))?;
        let n = s.inner.n_dofs();
        let u = split(&s.inner, input(u, len, n, "u")?);
        let f = split(&s.inner, input(f, len, n, "f")?);
        let norm = norm.as_mut().ok_or_else(|| null("norm"))?;
        *norm = global_norm(&s.inner.residual(&u, &f).map_err(lift)?);
        Ok(())
    })
}

/// dG-norm distance between `u` and the manufactured exact solution.
///
/// # Safety
/// `u` must hold `len` doubles; `err` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmg_system_dg_error(
    sys: *const StmgSystem,
    u: *const f64,
    len: usize,
    err: *mut f64,
) -> StmgStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("system"))?;
        let u = split(&s.inner, input(u, len, s.inner.n_dofs(), "u")?);
        let err = err.as_mut().ok_or_else(|| null("err"))?;
        *err = s.inner.dg_error(&u, &s.problem).map_err(lift)?;
        Ok(())
    })
}

/// Builds a multigrid hierarchy for the given setup. `options` may be null
/// for defaults.
///
/// # Safety
/// `setup` must be valid for reads, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_new(
    setup: *const StmgSetup,
    options: *const StmgMgOptions,
    out: *mut *mut StmgMg,
) -> StmgStatus {
    guard(|| {
        let setup = setup.as_ref().ok_or_else(|| null("setup"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| stmg_mg_options_default());
        let defaults = MgConfig::default();
        let config = MgConfig {
            smoother: SmootherConfig {
                omega: o.omega,
                pre_sweeps: o.pre_sweeps as usize,
                post_sweeps: o.post_sweeps as usize,
                strategy: o.strategy.into(),
                inner_tol: o.inner_tol,
                spd_method: SpdMethod::Cholesky,
            },
            coarse_cap: o.coarse_cap as usize,
            tol: o.tol,
            max_cycles: o.max_cycles as usize,
            ..defaults
        };
        let (s, problem) = convert_setup(setup);
        let inner = MgHierarchy::new(&s, Some(&problem), config).map_err(lift)?;
        *out = Box::into_raw(Box::new(StmgMg { inner }));
        Ok(())
    })
}

/// Releases a hierarchy; null is ignored.
///
/// # Safety
/// `mg` must come from [`stmg_mg_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_free(mg: *mut StmgMg) {
    if !mg.is_null() {
        drop(Box::from_raw(mg));
    }
}

/// Number of levels, 0 for a null handle.
///
/// # Safety
/// `mg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_n_levels(mg: *const StmgMg) -> usize {
    mg.as_ref().map_or(0, |m| m.inner.n_levels())
}

/// Unknowns on the finest level, 0 for a null handle.
///
/// # Safety
/// `mg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_n_dofs(mg: *const StmgMg) -> usize {
    mg.as_ref().map_or(0, |m| m.inner.finest().n_dofs())
}

/// Copies the finest-level right-hand side into `rhs`.
///
/// # Safety
/// `rhs` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_rhs(mg: *const StmgMg, rhs: *mut f64, len: usize) -> StmgStatus {
    guard(|| {
        let m = mg.as_ref().ok_or_else(|| null("mg"))?;
        let sys = m.inner.finest();
        join(&sys.rhs, output(rhs, len, sys.n_dofs(), "rhs")?);
        Ok(())
    })
}

/// Runs V-cycles from a zero guess. Returns `NotConverged` (with `u` and
/// `info` still filled) when the cycle budget runs out.
///
/// # Safety
/// `f` and `u` must hold `len` doubles; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn stmg_mg_solve(
    mg: *const StmgMg,
    f: *const f64,
    u: *mut f64,
    len: usize,
    info: *mut StmgSolveInfo,
) -> StmgStatus {
    guard(|| {
        let m = mg.as_ref().ok_or_else(|| null("mg"))?;
        let sys = m.inner.finest();
        let n = sys.n_dofs();
        let f = split(sys, input(f, len, n, "f")?);
        let out = output(u, len, n, "u")?;
        let (sol, rep) = m.inner.solve(&f).map_err(lift)?;
        join(&sol, out);
        if let Some(info) = info.as_mut() {
            *info = StmgSolveInfo {
                iterations: rep.iterations as u32,
                converged: rep.converged,
                relative_residual: rep.relative_residual(),
                seconds: rep.seconds,
            };
        }
        if rep.converged {
            Ok(())
        } else {
            Err((
                StmgStatus::NotConverged,
                format!(
                    "multigrid stopped after {} cycles at relative residual {:e}",
                    rep.iterations,
                    rep.relative_residual()
                ),
            ))
        }
    })
}
