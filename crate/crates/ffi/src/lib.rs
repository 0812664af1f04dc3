//! C ABI for the concave-clf toolkit.
//!
//! Objects are passed as opaque handles. Constructors write the handle
//! through an out-parameter and each type has a matching `_free`. Every fallible call
//! returns a [`CclfStatus`]; on failure a message is available from
//! [`cclf_last_error_message`] on the same thread. Strings returned through
//! `char**` out-parameters are owned by the caller and released with
//! [`cclf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use concave_clf::cli::config::ComparisonSpec;
use concave_clf::comparison::{ComparisonFn, RationalFactorParams};
use concave_clf::plant::{preset, PlantModel, PlantSpec};
use concave_clf::sim::{metrics, simulate, ControllerSpec, SimConfig, TrajectoryRecord};
use concave_clf::tuning::{closed_form_rate, normalize_ell};
use concave_clf::windowed::{crossing_time, nominal_rate, relaxation_ratio, Window};
use concave_clf::Error;
use nalgebra::DVector;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CclfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Precondition = 4,
    Unsupported = 5,
    Infeasible = 6,
    Tuning = 7,
    Numerical = 8,
    Config = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
    Other = 13,
}

/// A comparison function `α`.
pub struct CclfComparison(ComparisonFn);

/// A plant model with its CLF.
pub struct CclfPlant(Box<dyn PlantModel>);

/// A simulated closed-loop trajectory.
pub struct CclfTrajectory(TrajectoryRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: CclfStatus,
    msg: String,
}

fn status_of(e: &Error) -> CclfStatus {
    match e {
        Error::Precondition(_) | Error::State(_) => CclfStatus::Precondition,
        Error::InvalidParameter(_) | Error::InfeasibleNormalization(_) => CclfStatus::InvalidArgument,
        Error::Unsupported(_) => CclfStatus::Unsupported,
        Error::Infeasible(_) | Error::NoCrossing { .. } => CclfStatus::Infeasible,
        Error::Tuning { .. } => CclfStatus::Tuning,
        Error::Integrability(_) | Error::Numerical(_) | Error::Classification(_) | Error::Sampling(_) => {
            CclfStatus::Numerical
        }
        Error::Config(_) => CclfStatus::Config,
        Error::Io(_) => CclfStatus::Io,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { status: status_of(&e), msg: e.to_string() }
    }
}

fn fail(status: CclfStatus, msg: impl Into<String>) -> Failure {
    Failure { status, msg: msg.into() }
}

fn record(status: CclfStatus, msg: String) -> CclfStatus {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(msg.replace('\0', " ")).expect("interior NULs removed"));
    });
    status
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CclfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CclfStatus::Ok,
        Ok(Err(Failure { status, msg })) => record(status, msg),
        Err(_) => record(CclfStatus::Panic, "internal panic".into()),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CclfStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CclfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CclfStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(CclfStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CclfStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(fail(CclfStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(fail(CclfStatus::NullPointer, "output buffer is NULL"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| fail(CclfStatus::Other, "string contains NUL"))
}

/// Message of the last failure on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn cclf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cclf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cclf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn new_comparison(out: *mut *mut CclfComparison, f: impl FnOnce() -> Result<ComparisonFn, Failure>) -> CclfStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = Box::into_raw(Box::new(CclfComparison(f()?)));
        Ok(())
    })
}

/// `α(v) = σ·v`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_comparison_linear(sigma: f64, out: *mut *mut CclfComparison) -> CclfStatus {
    new_comparison(out, || Ok(ComparisonFn::linear(sigma)?))
}

/// `α(v) = σ·s_rat(v)·v` with `ℓ` in absolute level units.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_comparison_rational(
    sigma: f64,
    k_min: f64,
    k_max: f64,
    ell: f64,
    out: *mut *mut CclfComparison,
) -> CclfStatus {
    new_comparison(out, || Ok(ComparisonFn::rational(sigma, RationalFactorParams::new(k_min, k_max, ell)?)?))
}

/// Parses a comparison from JSON, e.g. `{"kind":"linear","parameters":{"sigma":3}}`.
/// A `{"normalized_rational":{...}}` block is normalized at level `c`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_comparison_from_json(json: *const c_char, c: f64, out: *mut *mut CclfComparison) -> CclfStatus {
    new_comparison(out, || {
        let text = str_arg(json, "json")?;
        let spec: ComparisonSpec = serde_json::from_str(text).map_err(|e| Failure::from(Error::from(e)))?;
        Ok(spec.resolve(c)?)
    })
}

/// # Safety
/// `f` must come from this library (or be NULL) and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cclf_comparison_free(f: *mut CclfComparison) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_comparison_value(f: *const CclfComparison, v: f64, out: *mut f64) -> CclfStatus {
    guard(|| {
        let f = ref_arg(f, "comparison")?;
        *out_arg(out, "out")? = f.0.eval_alpha(v)?;
        Ok(())
    })
}

unsafe fn window_metric(
    f: *const CclfComparison,
    eps: f64,
    c: f64,
    out: *mut f64,
    m: fn(&ComparisonFn, &Window) -> concave_clf::Result<f64>,
) -> CclfStatus {
    guard(|| {
        let f = ref_arg(f, "comparison")?;
        let w = Window::new(eps, c)?;
        *out_arg(out, "out")? = m(&f.0, &w)?;
        Ok(())
    })
}

/// Crossing time of `ẏ = −α(y)` from `c` to `eps`.
///
/// # Safety
/// `f` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_crossing_time(f: *const CclfComparison, eps: f64, c: f64, out: *mut f64) -> CclfStatus {
    window_metric(f, eps, c, out, crossing_time)
}

/// Windowed nominal rate `ln(c/ε)/T`.
///
/// # Safety
/// `f` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_nominal_rate(f: *const CclfComparison, eps: f64, c: f64, out: *mut f64) -> CclfStatus {
    window_metric(f, eps, c, out, nominal_rate)
}

/// Endpoint-relaxation ratio `α(c)/(σ_α·c)`.
///
/// # Safety
/// `f` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_relaxation_ratio(f: *const CclfComparison, eps: f64, c: f64, out: *mut f64) -> CclfStatus {
    window_metric(f, eps, c, out, relaxation_ratio)
}

/// `ℓ = (r − k_min)·c/(k_max − r)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_normalize_ell(k_min: f64, k_max: f64, r: f64, c: f64, out: *mut f64) -> CclfStatus {
    guard(|| {
        *out_arg(out, "out")? = normalize_ell(k_min, k_max, r, c)?;
        Ok(())
    })
}

/// Closed-form windowed rate of the rational comparison.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_closed_form_rate(
    k_min: f64,
    k_max: f64,
    ell: f64,
    sigma: f64,
    eps: f64,
    c: f64,
    out: *mut f64,
) -> CclfStatus {
    guard(|| {
        let w = Window::new(eps, c)?;
        *out_arg(out, "out")? = closed_form_rate(k_min, k_max, ell, sigma, &w)?;
        Ok(())
    })
}

unsafe fn new_plant(out: *mut *mut CclfPlant, spec: impl FnOnce() -> Result<PlantSpec, Failure>) -> CclfStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = Box::into_raw(Box::new(CclfPlant(spec()?.build()?)));
        Ok(())
    })
}

/// Built-in plant: `"integrator"`, `"pendulum"` or `"quadrotor"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_preset(name: *const c_char, out: *mut *mut CclfPlant) -> CclfStatus {
    new_plant(out, || Ok(preset(str_arg(name, "name")?)?))
}

/// Plant from a JSON parameter block, e.g. `{"preset":"pendulum","mass":1.2}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_from_json(json: *const c_char, out: *mut *mut CclfPlant) -> CclfStatus {
    new_plant(out, || serde_json::from_str(str_arg(json, "json")?).map_err(|e| Error::from(e).into()))
}

/// # Safety
/// `p` must come from this library (or be NULL) and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_free(p: *mut CclfPlant) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p`, `n` and `m` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_dims(p: *const CclfPlant, n: *mut usize, m: *mut usize) -> CclfStatus {
    guard(|| {
        let p = ref_arg(p, "plant")?;
        *out_arg(n, "n")? = p.0.state_dim();
        *out_arg(m, "m")? = p.0.input_dim();
        Ok(())
    })
}

/// Copies the protocol's initial state into `buf` (`len ≥ n`).
///
/// # Safety
/// `p` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_initial_state(p: *const CclfPlant, buf: *mut f64, len: usize) -> CclfStatus {
    guard(|| {
        let p = ref_arg(p, "plant")?;
        copy_out(p.0.initial_state().as_slice(), buf, len)
    })
}

unsafe fn state_arg(p: &CclfPlant, x: *const f64, len: usize) -> Result<DVector<f64>, Failure> {
    let x = DVector::from_column_slice(slice_arg(x, len, "x")?);
    p.0.check_state(&x)?;
    Ok(x)
}

/// `V(x)`.
///
/// # Safety
/// `p` and `out` must be valid; `x` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_clf(p: *const CclfPlant, x: *const f64, len: usize, out: *mut f64) -> CclfStatus {
    guard(|| {
        let p = ref_arg(p, "plant")?;
        let x = state_arg(p, x, len)?;
        *out_arg(out, "out")? = p.0.clf(&x);
        Ok(())
    })
}

/// `L_fV(x)` into `lf` and the `m` entries of `L_gV(x)` into `lg`.
///
/// # Safety
/// `p` and `lf` must be valid; `x` must hold `len` doubles and `lg` `lg_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_plant_lie_derivatives(
    p: *const CclfPlant,
    x: *const f64,
    len: usize,
    lf: *mut f64,
    lg: *mut f64,
    lg_len: usize,
) -> CclfStatus {
    guard(|| {
        let p = ref_arg(p, "plant")?;
        let x = state_arg(p, x, len)?;
        let lie = p.0.lie_derivatives(&x);
        copy_out(lie.lg.as_slice(), lg, lg_len)?;
        *out_arg(lf, "lf")? = lie.lf;
        Ok(())
    })
}

/// Simulates the plant from its initial state.
///
/// `controller_json` uses the experiment-config controller format; comparisons
/// given as `normalized_rational` are normalized at `c = V(x₀)`. `sim_json`
/// may be NULL for the defaults (1 ms, 5 s, 4 substeps).
///
/// # Safety
/// `p` and `out` must be valid; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cclf_simulate(
    p: *const CclfPlant,
    controller_json: *const c_char,
    sim_json: *const c_char,
    out: *mut *mut CclfTrajectory,
) -> CclfStatus {
    guard(|| {
        let p = ref_arg(p, "plant")?;
        let slot = out_arg(out, "out")?;
        let spec: ControllerSpec<ComparisonSpec> =
            serde_json::from_str(str_arg(controller_json, "controller_json")?).map_err(Error::from)?;
        let cfg: SimConfig = if sim_json.is_null() {
            SimConfig::default()
        } else {
            serde_json::from_str(str_arg(sim_json, "sim_json")?).map_err(Error::from)?
        };
        let x0 = p.0.initial_state();
        let c = p.0.clf(&x0);
        let spec = spec.map_comparison(|s| s.resolve(c))?;
        let mut ctl = spec.build(p.0.as_ref())?;
        let rec = simulate(p.0.as_ref(), ctl.as_mut(), &cfg, &x0)?;
        *slot = Box::into_raw(Box::new(CclfTrajectory(rec)));
        Ok(())
    })
}

/// # Safety
/// `t` must come from this library (or be NULL) and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_free(t: *mut CclfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of samples.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_len(t: *const CclfTrajectory, out: *mut usize) -> CclfStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(t, "trajectory")?.0.len();
        Ok(())
    })
}

/// Sample times (s).
///
/// # Safety
/// `t` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_times(t: *const CclfTrajectory, buf: *mut f64, len: usize) -> CclfStatus {
    guard(|| copy_out(&ref_arg(t, "trajectory")?.0.times, buf, len))
}

/// `V(x(t_k))` per sample.
///
/// # Safety
/// `t` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_values(t: *const CclfTrajectory, buf: *mut f64, len: usize) -> CclfStatus {
    guard(|| copy_out(&ref_arg(t, "trajectory")?.0.values, buf, len))
}

/// Full record as CSV; release with `cclf_string_free`.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_csv(t: *const CclfTrajectory, out: *mut *mut c_char) -> CclfStatus {
    guard(|| {
        let t = ref_arg(t, "trajectory")?;
        *out_arg(out, "out")? = owned_string(t.0.to_csv())?;
        Ok(())
    })
}

/// Crossing times, nominal rates and energies at `ε = xi[i]·V(x₀)` as JSON; release with `cclf_string_free`.
///
/// # Safety
/// `t` and `out` must be valid; `xi` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cclf_trajectory_metrics_json(
    t: *const CclfTrajectory,
    xi: *const f64,
    n: usize,
    out: *mut *mut c_char,
) -> CclfStatus {
    guard(|| {
        let t = ref_arg(t, "trajectory")?;
        let slot = out_arg(out, "out")?;
        if t.0.is_empty() {
            return Err(fail(CclfStatus::Precondition, "empty trajectory"));
        }
        let c = t.0.initial_value();
        let eps: Vec<f64> = slice_arg(xi, n, "xi")?.iter().map(|x| x * c).collect();
        let report = metrics(&t.0, c, &eps)?;
        *slot = owned_string(serde_json::to_string(&report).map_err(Error::from)?)?;
        Ok(())
    })
}
