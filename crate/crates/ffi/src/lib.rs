//! C ABI over the `mflq` solvers.
//!
//! Objects are opaque handles created by `*_new`/`*_solve` functions and released with the
//! matching `*_free`. Every fallible call returns an [`MflqStatus`]; on failure the message is
//! available from [`mflq_last_error`]. Strings returned by the library are freed with
//! [`mflq_string_free`]. Matrices are copied out row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mflq::analysis;
use mflq::linalg::{Mat, Vector};
use mflq::{ArePair, MflqError, ProblemData, SimulationConfig, StaticSolution};

/// Status codes; the nonzero values match the `mflq` process exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MflqStatus {
    Ok = 0,
    Other = 1,
    Parse = 2,
    Shape = 3,
    Assumption = 4,
    Acceptance = 5,
    NullArgument = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Validated problem data.
pub struct MflqProblem(ProblemData);

/// Solution pair of the two algebraic Riccati equations.
pub struct MflqAre(ArePair);

/// Minimizer, multiplier and value of the static problem.
pub struct MflqStatic(StaticSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &MflqError) -> MflqStatus {
    match err.exit_code() {
        2 => MflqStatus::Parse,
        3 => MflqStatus::Shape,
        4 => MflqStatus::Assumption,
        5 => MflqStatus::Acceptance,
        _ => MflqStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MflqStatus>) -> MflqStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MflqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            MflqStatus::Panic
        }
    }
}

fn fail(err: MflqError) -> MflqStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(name: &str) -> MflqStatus {
    set_error(format!("{name} is null"));
    MflqStatus::NullArgument
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, MflqStatus> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), MflqStatus> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        set_error(format!("buffer holds {len} values, need {}", src.len()));
        return Err(MflqStatus::BufferTooSmall);
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn mflq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mflq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mflq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parses problem JSON (fields n, m and row-major blocks) into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mflq_problem_from_json(json: *const c_char, out: *mut *mut MflqProblem) -> MflqStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| fail(MflqError::Parse(e.to_string())))?;
        let p = ProblemData::from_json_str(text).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(MflqProblem(p))) };
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle from [`mflq_problem_from_json`].
#[no_mangle]
pub unsafe extern "C" fn mflq_problem_free(p: *mut MflqProblem) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// State and control dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflq_problem_dims(p: *const MflqProblem, n: *mut usize, m: *mut usize) -> MflqStatus {
    guard(|| {
        let p = unsafe { as_ref(p, "problem") }?;
        if n.is_null() || m.is_null() {
            return Err(null("dims"));
        }
        unsafe {
            *n = p.0.dims.n;
            *m = p.0.dims.m;
        }
        Ok(())
    })
}

/// Checks the positivity assumptions; fails with `ASSUMPTION` naming the violated condition.
///
/// # Safety
/// `p` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mflq_problem_check_assumptions(p: *const MflqProblem) -> MflqStatus {
    guard(|| {
        let p = unsafe { as_ref(p, "problem") }?;
        mflq::model::require_a1(&p.0).map(|_| ()).map_err(fail)
    })
}

/// Solves both algebraic Riccati equations.
///
/// # Safety
/// `p` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mflq_are_solve(p: *const MflqProblem, out: *mut *mut MflqAre) -> MflqStatus {
    guard(|| {
        let p = unsafe { as_ref(p, "problem") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let are = mflq::riccati::solve_are(&p.0).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(MflqAre(are))) };
        Ok(())
    })
}

/// # Safety
/// `a` must be NULL or a handle from [`mflq_are_solve`].
#[no_mangle]
pub unsafe extern "C" fn mflq_are_free(a: *mut MflqAre) {
    if !a.is_null() {
        drop(unsafe { Box::from_raw(a) });
    }
}

/// Copies P (n×n, row-major) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_are_copy_P(a: *const MflqAre, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(&row_major(&as_ref(a, "are")?.0.P), buf, len) })
}

/// Copies Π (n×n, row-major) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_are_copy_Pi(a: *const MflqAre, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(&row_major(&as_ref(a, "are")?.0.Pi), buf, len) })
}

/// Copies the feedback gain Θ (m×n, row-major) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_are_copy_Theta(a: *const MflqAre, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(&row_major(&as_ref(a, "are")?.0.Theta), buf, len) })
}

/// Max-abs residuals of both equations.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflq_are_residuals(
    a: *const MflqAre,
    residual_p: *mut f64,
    residual_pi: *mut f64,
) -> MflqStatus {
    guard(|| {
        let a = unsafe { as_ref(a, "are") }?;
        if residual_p.is_null() || residual_pi.is_null() {
            return Err(null("residual"));
        }
        unsafe {
            *residual_p = a.0.residual_P;
            *residual_pi = a.0.residual_Pi;
        }
        Ok(())
    })
}

/// Solves the static problem using the ARE solution P.
///
/// # Safety
/// Handles must be valid and belong to the same problem; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mflq_static_solve(
    p: *const MflqProblem,
    a: *const MflqAre,
    out: *mut *mut MflqStatic,
) -> MflqStatus {
    guard(|| {
        let p = unsafe { as_ref(p, "problem") }?;
        let a = unsafe { as_ref(a, "are") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = mflq::static_opt::solve_static(&p.0, &a.0.P).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(MflqStatic(s))) };
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from [`mflq_static_solve`].
#[no_mangle]
pub unsafe extern "C" fn mflq_static_free(s: *mut MflqStatic) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Optimal static value V.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflq_static_value(s: *const MflqStatic, value: *mut f64) -> MflqStatus {
    guard(|| {
        let s = unsafe { as_ref(s, "static") }?;
        if value.is_null() {
            return Err(null("value"));
        }
        unsafe { *value = s.0.V };
        Ok(())
    })
}

/// Copies x* (length n) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_static_copy_x(s: *const MflqStatic, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(as_ref(s, "static")?.0.x_star.as_slice(), buf, len) })
}

/// Copies u* (length m) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_static_copy_u(s: *const MflqStatic, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(as_ref(s, "static")?.0.u_star.as_slice(), buf, len) })
}

/// Copies λ* (length n) into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflq_static_copy_lambda(s: *const MflqStatic, buf: *mut f64, len: usize) -> MflqStatus {
    guard(|| unsafe { copy_out(as_ref(s, "static")?.0.lambda_star.as_slice(), buf, len) })
}

/// Runs the coupled turnpike experiment and returns its JSON report in `out_json`.
///
/// Free the string with [`mflq_string_free`]. Invariant failures still produce the report
/// and return `ACCEPTANCE`.
///
/// # Safety
/// `x0` must hold `n` doubles; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mflq_turnpike_report_json(
    p: *const MflqProblem,
    x0: *const f64,
    n: usize,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> MflqStatus {
    guard(|| {
        let p = unsafe { as_ref(p, "problem") }?;
        if x0.is_null() {
            return Err(null("x0"));
        }
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let x0 = Vector::from_column_slice(unsafe { std::slice::from_raw_parts(x0, n) });
        let config = SimulationConfig {
            T: horizon,
            dt,
            n_paths,
            seed,
            coupled: true,
        };
        let run = analysis::turnpike_report(&p.0, &x0, &config).map_err(fail)?;
        let text = serde_json::to_string(&run.report).map_err(|e| fail(MflqError::Io(e.to_string())))?;
        unsafe { *out_json = to_c_string(text) };
        match run.report.failed_invariants().first() {
            Some(c) => Err(fail(MflqError::Acceptance(c.name.clone()))),
            None => Ok(()),
        }
    })
}
