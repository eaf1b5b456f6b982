//! C interface to the `lqc` library.
//!
//! Objects are opaque handles created by `lqc_*_new` and released by the
//! matching `lqc_*_free`. Matrices cross the boundary as row-major `double`
//! arrays whose shapes follow from the owning system: `A` is `d×d`, `B` is
//! `d×k`, `W` and `Q` are `d×d`, `R` is `k×k`, gains are `k×d`, joint
//! covariances are `(d+k)×(d+k)`. Every function returns an [`LqcStatus`];
//! on failure [`lqc_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use lqc::fll::{FllConfig, FllState};
use lqc::harness::{self, ExperimentConfig};
use lqc::lds::{self, CostPair, LinearSystem, RandomStream};
use lqc::ogd::OgdState;
use lqc::sdp::{self, OracleOptions, SdpProblem};
use lqc::LqcError;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad shapes, non-finite or non-symmetric inputs, malformed config.
    InvalidArgument = 2,
    /// The trace budget is too small for the system.
    Infeasible = 3,
    /// An iterative solver failed or a policy turned out unstable.
    Numerical = 4,
    /// The system cannot be driven to zero as a reset requires.
    RankDeficient = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Stream ids for the random generators owned by handles.
const LEARNER_STREAM: u64 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &LqcError) -> LqcStatus {
    match e {
        LqcError::DimensionMismatch { .. } | LqcError::Contract(_) | LqcError::Config(_) | LqcError::Json(_) => {
            LqcStatus::InvalidArgument
        }
        LqcError::InfeasibleSet(_) => LqcStatus::Infeasible,
        LqcError::RankDeficient(_) | LqcError::Uncontrollable { .. } => LqcStatus::RankDeficient,
        LqcError::Io(_) | LqcError::Csv(_) => LqcStatus::Io,
        LqcError::UnstablePolicy { .. }
        | LqcError::NumericalFailure(_)
        | LqcError::SingularBlock { .. }
        | LqcError::NonConvergence { .. } => LqcStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Lqc(LqcError),
}

impl From<LqcError> for Failure {
    fn from(e: LqcError) -> Self {
        Failure::Lqc(e)
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> LqcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LqcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            LqcStatus::NullPointer
        }
        Ok(Err(Failure::Lqc(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            LqcStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `rows * cols` readable doubles.
unsafe fn read_matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> FfiResult<DMatrix<f64>> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = std::slice::from_raw_parts(p, rows * cols);
    Ok(DMatrix::from_row_slice(rows, cols, s))
}

/// # Safety
/// `p` must be null or point to `m.len()` writable doubles.
unsafe fn write_matrix(p: *mut f64, m: &DMatrix<f64>, what: &'static str) -> FfiResult {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let out = std::slice::from_raw_parts_mut(p, m.len());
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[i * m.ncols() + j] = *v;
        }
    }
    Ok(())
}

/// # Safety
/// `p` must be null or point to a valid, writable `T`.
unsafe fn write_value<T>(p: *mut T, v: T, what: &'static str) -> FfiResult {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `p` must be null or point to a live handle of type `T`.
unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

/// # Safety
/// `p` must be null or point to a live handle of type `T`.
unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// # Safety
/// `out` must be null or writable.
unsafe fn publish<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

/// # Safety
/// `p` must be null or have come from `Box::into_raw` and not been freed.
unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `q` and `r` must be null or hold `d²` and `k²` doubles for `sys`.
unsafe fn cost_pair(sys: &LinearSystem, q: *const f64, r: *const f64) -> FfiResult<CostPair> {
    let (d, k) = (sys.state_dim(), sys.control_dim());
    let (q, r) = (read_matrix(q, d, d, "Q")?, read_matrix(r, k, k, "R")?);
    Ok(CostPair::new(q, r)?)
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next `lqc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn lqc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Linear system `x' = A x + B u + w` with `w ~ N(0, W)`.
pub struct LqcSystem {
    sys: LinearSystem,
}

/// Creates a system from row-major `A` (`d×d`), `B` (`d×k`) and `W` (`d×d`).
///
/// # Safety
/// The arrays must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_system_new(
    d: usize,
    k: usize,
    a: *const f64,
    b: *const f64,
    w: *const f64,
    out: *mut *mut LqcSystem,
) -> LqcStatus {
    guard(|| {
        let a = read_matrix(a, d, d, "A")?;
        let b = read_matrix(b, d, k, "B")?;
        let w = read_matrix(w, d, d, "W")?;
        let sys = LinearSystem::new(a, b, w)?;
        publish(out, LqcSystem { sys })
    })
}

/// # Safety
/// `sys` must be null or a handle from [`lqc_system_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lqc_system_free(sys: *mut LqcSystem) {
    release(sys);
}

/// # Safety
/// `sys` must be a live handle; `d` and `k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_system_dims(sys: *const LqcSystem, d: *mut usize, k: *mut usize) -> LqcStatus {
    guard(|| {
        let s = &handle(sys, "system")?.sys;
        write_value(d, s.state_dim(), "d")?;
        write_value(k, s.control_dim(), "k")
    })
}

/// The feasible set of joint covariances for a system and trace budget `ν`.
pub struct LqcProblem {
    prob: SdpProblem,
}

/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_problem_new(sys: *const LqcSystem, nu: f64, out: *mut *mut LqcProblem) -> LqcStatus {
    guard(|| {
        let s = handle(sys, "system")?;
        let prob = SdpProblem::new(s.sys.clone(), nu)?;
        publish(out, LqcProblem { prob })
    })
}

/// # Safety
/// `prob` must be null or a handle from [`lqc_problem_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lqc_problem_free(prob: *mut LqcProblem) {
    release(prob);
}

/// Frobenius projection of the `(d+k)×(d+k)` matrix `sigma` onto the
/// feasible set, written to `out` (which may alias `sigma`).
///
/// # Safety
/// `prob` must be a live handle; `sigma` and `out` must hold `(d+k)²` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqc_problem_project(prob: *const LqcProblem, sigma: *const f64, out: *mut f64) -> LqcStatus {
    guard(|| {
        let p = &handle(prob, "problem")?.prob;
        let n = p.dim();
        let m = read_matrix(sigma, n, n, "sigma")?;
        if (&m - m.transpose()).norm() > 1e-9 * m.norm().max(1.0) {
            return Err(LqcError::Contract("sigma is not symmetric".into()).into());
        }
        let projected = p.project(&m)?;
        write_matrix(out, projected.matrix(), "out")
    })
}

/// Best gain for the fixed costs `(Q, R)` under the problem's budget,
/// written as a row-major `k×d` matrix. `tol <= 0` selects the default.
///
/// # Safety
/// `prob` must be a live handle; arrays must be sized by the system.
#[no_mangle]
pub unsafe extern "C" fn lqc_oracle(
    prob: *const LqcProblem,
    q: *const f64,
    r: *const f64,
    tol: f64,
    gain_out: *mut f64,
) -> LqcStatus {
    guard(|| {
        let p = &handle(prob, "problem")?.prob;
        let costs = cost_pair(p.system(), q, r)?;
        let mut opts = OracleOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        let sol = sdp::solve_oracle(p, &costs, &opts)?;
        write_matrix(gain_out, &sol.gain, "gain_out")
    })
}

/// Online gradient descent over the feasible set.
pub struct LqcOgd {
    state: OgdState,
    rng: RandomStream,
}

/// # Safety
/// `prob` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_new(prob: *const LqcProblem, eta: f64, seed: u64, out: *mut *mut LqcOgd) -> LqcStatus {
    guard(|| {
        let p = handle(prob, "problem")?;
        let state = OgdState::init(p.prob.clone(), eta)?;
        let rng = lds::random_stream(seed, LEARNER_STREAM);
        publish(out, LqcOgd { state, rng })
    })
}

/// # Safety
/// `ogd` must be null or a handle from [`lqc_ogd_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_free(ogd: *mut LqcOgd) {
    release(ogd);
}

/// Samples a control for state `x` (length `d`) into `u_out` (length `k`).
///
/// # Safety
/// `ogd` must be a live handle; arrays must be sized by the system.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_act(ogd: *mut LqcOgd, x: *const f64, u_out: *mut f64) -> LqcStatus {
    guard(|| {
        let o = handle_mut(ogd, "ogd")?;
        let d = o.state.problem().system().state_dim();
        let x = DVector::from_column_slice(read_matrix(x, d, 1, "x")?.as_slice());
        let u = o.state.act(&x, &mut o.rng);
        write_matrix(u_out, &DMatrix::from_column_slice(u.len(), 1, u.as_slice()), "u_out")
    })
}

/// Takes one gradient step on the revealed costs; writes the Frobenius norm
/// of the step to `step_out` when it is not null.
///
/// # Safety
/// `ogd` must be a live handle; arrays must be sized by the system.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_update(ogd: *mut LqcOgd, q: *const f64, r: *const f64, step_out: *mut f64) -> LqcStatus {
    guard(|| {
        let o = handle_mut(ogd, "ogd")?;
        let costs = cost_pair(o.state.problem().system(), q, r)?;
        let step = o.state.update(&costs)?;
        if !step_out.is_null() {
            step_out.write(step);
        }
        Ok(())
    })
}

/// Current gain as a row-major `k×d` matrix.
///
/// # Safety
/// `ogd` must be a live handle; `gain_out` must hold `k·d` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_gain(ogd: *const LqcOgd, gain_out: *mut f64) -> LqcStatus {
    guard(|| write_matrix(gain_out, handle(ogd, "ogd")?.state.gain(), "gain_out"))
}

/// Current joint covariance iterate as a row-major `(d+k)×(d+k)` matrix.
///
/// # Safety
/// `ogd` must be a live handle; `sigma_out` must hold `(d+k)²` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqc_ogd_sigma(ogd: *const LqcOgd, sigma_out: *mut f64) -> LqcStatus {
    guard(|| write_matrix(sigma_out, handle(ogd, "ogd")?.state.sigma().matrix(), "sigma_out"))
}

/// Follow-the-lazy-leader with automatic resets.
pub struct LqcFll {
    state: FllState,
    rng: RandomStream,
}

/// # Safety
/// `prob` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_new(prob: *const LqcProblem, eta: f64, seed: u64, out: *mut *mut LqcFll) -> LqcStatus {
    guard(|| {
        let p = &handle(prob, "problem")?.prob;
        let mut rng = lds::random_stream(seed, LEARNER_STREAM);
        let state = FllState::init(p.clone(), FllConfig::new(eta, p.nu()), &mut rng)?;
        publish(out, LqcFll { state, rng })
    })
}

/// # Safety
/// `fll` must be null or a handle from [`lqc_fll_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_free(fll: *mut LqcFll) {
    release(fll);
}

/// Control for state `x` into `u_out`; `resetting_out`, when not null,
/// receives whether the control comes from a reset.
///
/// # Safety
/// `fll` must be a live handle; arrays must be sized by the system.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_act(fll: *mut LqcFll, x: *const f64, u_out: *mut f64, resetting_out: *mut bool) -> LqcStatus {
    guard(|| {
        let f = handle_mut(fll, "fll")?;
        let d = f.state.problem().system().state_dim();
        let x = DVector::from_column_slice(read_matrix(x, d, 1, "x")?.as_slice());
        let action = f.state.act(&x)?;
        let u = &action.control;
        write_matrix(u_out, &DMatrix::from_column_slice(u.len(), 1, u.as_slice()), "u_out")?;
        if !resetting_out.is_null() {
            resetting_out.write(action.resetting);
        }
        Ok(())
    })
}

/// Absorbs the revealed costs; `switched_out`, when not null, receives
/// whether the gain changed.
///
/// # Safety
/// `fll` must be a live handle; arrays must be sized by the system.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_update(fll: *mut LqcFll, q: *const f64, r: *const f64, switched_out: *mut bool) -> LqcStatus {
    guard(|| {
        let f = handle_mut(fll, "fll")?;
        let costs = cost_pair(f.state.problem().system(), q, r)?;
        let switched = f.state.update(&costs, &mut f.rng)?;
        if !switched_out.is_null() {
            switched_out.write(switched);
        }
        Ok(())
    })
}

/// # Safety
/// `fll` must be a live handle; `gain_out` must hold `k·d` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_gain(fll: *const LqcFll, gain_out: *mut f64) -> LqcStatus {
    guard(|| write_matrix(gain_out, handle(fll, "fll")?.state.gain(), "gain_out"))
}

/// # Safety
/// `fll` must be a live handle; `count_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqc_fll_switch_count(fll: *const LqcFll, count_out: *mut usize) -> LqcStatus {
    guard(|| write_value(count_out, handle(fll, "fll")?.state.switch_count(), "count_out"))
}

/// Runs the experiment described by the JSON `config` and writes
/// `trace.csv` and `summary.json` under `out_dir`. `regret_out`, when not
/// null, receives the regret of the first replicate. A replicate that fails
/// mid-run still writes its partial trace and yields `Numerical`.
///
/// # Safety
/// `config` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn lqc_run_experiment(config: *const c_char, out_dir: *const c_char, regret_out: *mut f64) -> LqcStatus {
    guard(|| {
        if config.is_null() {
            return Err(Failure::Null("config"));
        }
        if out_dir.is_null() {
            return Err(Failure::Null("out_dir"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|e| LqcError::Config(format!("config is not UTF-8: {e}")))?;
        let dir = CStr::from_ptr(out_dir)
            .to_str()
            .map_err(|e| LqcError::Config(format!("output path is not UTF-8: {e}")))?;
        let cfg = ExperimentConfig::from_json(text)?;
        let traces = harness::run_replicates(&cfg)?;
        harness::emit_all(&traces, &cfg, Path::new(dir))?;
        if let Some(first) = traces.first() {
            if !regret_out.is_null() {
                regret_out.write(first.summary.regret);
            }
        }
        match traces.iter().find_map(|t| t.summary.error.clone()) {
            Some(e) => Err(LqcError::NumericalFailure(e).into()),
            None => Ok(()),
        }
    })
}
