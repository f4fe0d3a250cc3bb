//! C ABI over the `ccmpc` crate.
//!
//! Objects cross the boundary as opaque handles created by a
//! `*_from_json` or `ccmpc_synthesize` call and released by the
//! matching `*_free`. Every fallible function returns a [`CcmpcError`];
//! on failure a message is kept per thread and read back with
//! [`ccmpc_last_error_message`]. Panics are caught and reported as
//! [`CcmpcError::Panic`], never unwound into the caller.
//!
//! Strings returned by the library are owned by the caller and must be
//! released with [`ccmpc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ccmpc::benchmark::joint_violation;
use ccmpc::chance::{beta_ellipsoid, beta_separation};
use ccmpc::mc::{simulate_runs, ViolationEstimate};
use ccmpc::problem::PolicyFile;
use ccmpc::specfun::Probability;
use ccmpc::{Error, PolicyParams, Problem, ProblemSpec, SolveStatus, Synthesis};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcmpcError {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Out-of-range argument, e.g. a probability outside (0, 1).
    InvalidArgument = 3,
    Dimension = 4,
    /// Malformed or unsupported problem or policy input.
    Problem = 5,
    Numerical = 6,
    /// The synthesis produced no policy (infeasible or iteration limit).
    NoPolicy = 7,
    BufferTooSmall = 8,
    Io = 9,
    Panic = 10,
}

/// Outcome of a synthesis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcmpcStatus {
    Optimal = 0,
    Infeasible = 1,
    MaxIter = 2,
}

/// Scalar summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CcmpcSolveSummary {
    pub status: CcmpcStatus,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Optimal phase-1 slack; negative means strictly feasible.
    pub phase1_slack: f64,
    pub phase1_iters: usize,
    pub barrier_steps: usize,
}

/// Empirical violation frequency with its 95% Wilson interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcmpcViolation {
    pub violations: usize,
    pub runs: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// A validated problem.
pub struct CcmpcProblem {
    inner: Problem,
}

/// Result of [`ccmpc_synthesize`].
pub struct CcmpcSynthesis {
    inner: Synthesis,
}

/// An affine disturbance-feedback policy.
pub struct CcmpcPolicy {
    inner: PolicyParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CcmpcError, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Dimension(_) | Error::NonCausal(_) => CcmpcError::Dimension,
            Error::Domain(_) | Error::Probability(_) | Error::NotPsd(_) => CcmpcError::InvalidArgument,
            Error::Numerical(_) => CcmpcError::Numerical,
            Error::Problem(_) => CcmpcError::Problem,
            Error::Io(_) | Error::Csv(_) => CcmpcError::Io,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: CcmpcError, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn set_last_error(msg: String) {
    // Interior NULs would truncate the C string; replace them.
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcmpcError {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CcmpcError::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {what}"));
            CcmpcError::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CcmpcError::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(CcmpcError::NullPointer, format!("{what} is null")))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CcmpcError::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(CcmpcError::InvalidUtf8, format!("{what}: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(CcmpcError::Problem, "string contains an interior NUL"))
}

fn probability(alpha: f64) -> Result<Probability, Failure> {
    Ok(Probability::new(alpha)?)
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. The pointer stays valid until the next call into the
/// library on the same thread.
#[no_mangle]
pub extern "C" fn ccmpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ccmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a problem given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_problem_from_json(json: *const c_char, out: *mut *mut CcmpcProblem) -> CcmpcError {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let problem = ProblemSpec::from_json_str(read_str(json, "json")?)?.build()?;
        *out = Box::into_raw(Box::new(CcmpcProblem { inner: problem }));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle from [`ccmpc_problem_from_json`].
#[no_mangle]
pub unsafe extern "C" fn ccmpc_problem_free(p: *mut CcmpcProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// State, input and horizon dimensions of a problem.
///
/// # Safety
/// `p` must be a live problem handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_problem_dims(
    p: *const CcmpcProblem,
    n: *mut usize,
    m: *mut usize,
    horizon: *mut usize,
) -> CcmpcError {
    guard(|| {
        let model = &borrow(p, "problem")?.inner.model;
        let (n, m, horizon) = (out_ptr(n, "n")?, out_ptr(m, "m")?, out_ptr(horizon, "horizon")?);
        (*n, *m, *horizon) = (model.n(), model.m(), model.horizon());
        Ok(())
    })
}

/// Solves the restricted program. An infeasible problem is not an error:
/// the call succeeds and the summary reports the status.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_synthesize(p: *const CcmpcProblem, out: *mut *mut CcmpcSynthesis) -> CcmpcError {
    guard(|| {
        let problem = &borrow(p, "problem")?.inner;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let synthesis = ccmpc::synthesize(problem)?;
        *out = Box::into_raw(Box::new(CcmpcSynthesis { inner: synthesis }));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from [`ccmpc_synthesize`].
#[no_mangle]
pub unsafe extern "C" fn ccmpc_synthesis_free(s: *mut CcmpcSynthesis) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live synthesis handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_synthesis_summary(s: *const CcmpcSynthesis, out: *mut CcmpcSolveSummary) -> CcmpcError {
    guard(|| {
        let r = &borrow(s, "synthesis")?.inner.report;
        *out_ptr(out, "out")? = CcmpcSolveSummary {
            status: match r.status {
                SolveStatus::Optimal => CcmpcStatus::Optimal,
                SolveStatus::Infeasible => CcmpcStatus::Infeasible,
                SolveStatus::MaxIter => CcmpcStatus::MaxIter,
            },
            objective_value: r.objective_value,
            kkt_residual: r.kkt_residual,
            max_violation: r.max_violation,
            phase1_slack: r.phase1_slack,
            phase1_iters: r.phase1_iters,
            barrier_steps: r.barrier_path.len(),
        };
        Ok(())
    })
}

/// Full solve report as JSON, to be released with [`ccmpc_string_free`].
///
/// # Safety
/// `s` must be a live synthesis handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_synthesis_report_json(s: *const CcmpcSynthesis, out: *mut *mut c_char) -> CcmpcError {
    guard(|| {
        let r = &borrow(s, "synthesis")?.inner.report;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        *out = into_c_string(r.to_json())?;
        Ok(())
    })
}

/// Copies the optimal policy into a new handle. Fails with
/// [`CcmpcError::NoPolicy`] unless the solve was optimal.
///
/// # Safety
/// `s` must be a live synthesis handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_synthesis_policy(s: *const CcmpcSynthesis, out: *mut *mut CcmpcPolicy) -> CcmpcError {
    guard(|| {
        let syn = &borrow(s, "synthesis")?.inner;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let policy = syn
            .policy
            .clone()
            .ok_or_else(|| fail(CcmpcError::NoPolicy, format!("solve status is {}", syn.report.status)))?;
        *out = Box::into_raw(Box::new(CcmpcPolicy { inner: policy }));
        Ok(())
    })
}

/// Parses a policy in the JSON format written by the `ccmpc` tool.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_policy_from_json(json: *const c_char, out: *mut *mut CcmpcPolicy) -> CcmpcError {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let policy = PolicyFile::from_json_str(read_str(json, "json")?)?.to_policy()?;
        *out = Box::into_raw(Box::new(CcmpcPolicy { inner: policy }));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a policy handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_policy_free(p: *mut CcmpcPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Policy as JSON, to be released with [`ccmpc_string_free`].
///
/// # Safety
/// `p` must be a live policy handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_policy_to_json(p: *const CcmpcPolicy, out: *mut *mut c_char) -> CcmpcError {
    guard(|| {
        let policy = &borrow(p, "policy")?.inner;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        *out = into_c_string(PolicyFile::from_policy(policy).to_json())?;
        Ok(())
    })
}

/// Copies the decision vector (offsets, then the free gain entries
/// column by column) into `buf`. `needed` always receives the length;
/// pass `len = 0` to query it. A short buffer fails with
/// [`CcmpcError::BufferTooSmall`] and is left untouched.
///
/// # Safety
/// `p` must be a live policy handle, `needed` a valid pointer and `buf`
/// valid for `len` writes (it may be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn ccmpc_policy_theta(
    p: *const CcmpcPolicy,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> CcmpcError {
    guard(|| {
        let theta = borrow(p, "policy")?.inner.flatten().theta_flat;
        *out_ptr(needed, "needed")? = theta.len();
        if len < theta.len() {
            return Err(fail(
                CcmpcError::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", theta.len()),
            ));
        }
        if buf.is_null() {
            return Err(fail(CcmpcError::NullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, theta.len()).copy_from_slice(theta.as_slice());
        Ok(())
    })
}

/// Closed-loop Monte Carlo: the fraction of `runs` trajectories that
/// violate at least one hard constraint of the problem. Runs are
/// reproducible for a given `seed` regardless of thread count.
///
/// # Safety
/// `p` and `policy` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_simulate(
    p: *const CcmpcProblem,
    policy: *const CcmpcPolicy,
    runs: usize,
    seed: u64,
    out: *mut CcmpcViolation,
) -> CcmpcError {
    guard(|| {
        let problem = &borrow(p, "problem")?.inner;
        let policy = &borrow(policy, "policy")?.inner;
        let out = out_ptr(out, "out")?;
        if runs == 0 {
            return Err(fail(CcmpcError::InvalidArgument, "runs must be positive"));
        }
        let batch = simulate_runs(policy, &problem.model, runs, seed)?;
        let est = if problem.constraints.is_empty() {
            ViolationEstimate::from_counts(0, runs)?
        } else {
            joint_violation(problem, &batch)?
        };
        *out = CcmpcViolation {
            violations: est.violations,
            runs: est.runs,
            rate: est.rate,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
        };
        Ok(())
    })
}

/// Per-row tightening factor of the separation restriction at row risk
/// `alpha_row`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_beta_separation(alpha_row: f64, out: *mut f64) -> CcmpcError {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = beta_separation(probability(alpha_row)?);
        Ok(())
    })
}

/// Tightening factor of the ellipsoidal restriction for `rows` rows
/// sharing risk `alpha` with a noise of dimension `noise_dim`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccmpc_beta_ellipsoid(alpha: f64, rows: usize, noise_dim: usize, out: *mut f64) -> CcmpcError {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = beta_ellipsoid(probability(alpha)?, rows, noise_dim)?;
        Ok(())
    })
}
