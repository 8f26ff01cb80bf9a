//! C ABI over the `pulsemech` core.
//!
//! Conventions:
//! - every fallible call returns a [`PmStatus`]; details are available from
//!   [`pm_last_error`] on the same thread until the next failing call
//! - objects are opaque handles created by `pm_experiment_from_*` or
//!   `pm_inverse_radon` and released with the matching `*_free`
//! - panics never cross the boundary; they surface as `PM_STATUS_PANIC`

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pulsemech::calibrate::{invert_transduction, thermal_pdf};
use pulsemech::condition::{analytic_variance, Estimator, ModeTerm};
use pulsemech::runner::{self, ExperimentConfig, Preset};
use pulsemech::tomography::{inverse_radon, Axis, GridSpec, PhaseSpaceDensity, Projections, ReconOptions};
use pulsemech::transduce::homodyne_eq1;
use pulsemech::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoRealSolution = 3,
    Coverage = 4,
    FitFailure = 5,
    Statistics = 6,
    EmptySelection = 7,
    Shortfall = 8,
    Config = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for PmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => PmStatus::InvalidArgument,
            Error::NoRealSolution(_) => PmStatus::NoRealSolution,
            Error::Coverage(_) => PmStatus::Coverage,
            Error::FitFailure { .. } => PmStatus::FitFailure,
            Error::Statistics(_) => PmStatus::Statistics,
            Error::EmptySelection => PmStatus::EmptySelection,
            Error::Shortfall(_) => PmStatus::Shortfall,
            Error::Config(_) => PmStatus::Config,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => PmStatus::Io,
        }
    }
}

/// Conditional-variance estimators, mirroring the core enum.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmEstimator {
    Diff = 0,
    OnePulse = 1,
    TwoPulse = 2,
    TwoPulseNearDegenerate = 3,
}

impl From<PmEstimator> for Estimator {
    fn from(e: PmEstimator) -> Self {
        match e {
            PmEstimator::Diff => Estimator::Diff,
            PmEstimator::OnePulse => Estimator::OnePulse,
            PmEstimator::TwoPulse => Estimator::TwoPulse,
            PmEstimator::TwoPulseNearDegenerate => Estimator::TwoPulseNearDegenerate,
        }
    }
}

/// Derived scalars of an experiment.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PmDerived {
    pub beta: f64,
    pub chi: f64,
    /// Thermal displacement SD in units of x_zpf.
    pub sigma_th: f64,
    /// Measurement imprecision `1 / chi` (x_zpf).
    pub sigma_m: f64,
}

/// One mechanical mode as seen by the analytic variance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PmModeTerm {
    /// Mode frequency over the reference frequency.
    pub ratio: f64,
    /// Dephasing rate, in inverse units of `t`.
    pub gamma: f64,
    /// Quadrature variance (x_zpf^2).
    pub var_q: f64,
}

/// First-angle summary of a noise-floor run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PmNoiseFloor {
    pub conditional_width: f64,
    pub nonconditional_width: f64,
    pub conditional_ratio: f64,
    pub nonconditional_ratio: f64,
    pub sigma_m: f64,
}

/// Opaque experiment configuration.
pub struct PmExperiment {
    config: ExperimentConfig,
}

/// Opaque reconstructed phase-space density.
pub struct PmDensity {
    density: PhaseSpaceDensity,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> PmStatus {
    let status = PmStatus::from(&e);
    set_error(e.to_string());
    status
}

fn invalid(msg: &str) -> PmStatus {
    set_error(msg.to_string());
    PmStatus::InvalidArgument
}

fn null(what: &str) -> PmStatus {
    set_error(format!("null pointer: {what}"));
    PmStatus::NullPointer
}

/// Run `f`, mapping a panic to `PM_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> PmStatus) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, PmStatus> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid("string is not UTF-8"))
}

/// Message for the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create an experiment from a built-in preset
/// (`thermal`, `tomography`, `common-mode`, `decoherence`, `noise-floor`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_from_preset(name: *const c_char, out: *mut *mut PmExperiment) -> PmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let name = match str_arg(name, "name") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let preset: Preset = match name.parse() {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let config = ExperimentConfig::preset(preset);
        *out = Box::into_raw(Box::new(PmExperiment { config }));
        PmStatus::Ok
    })
}

/// Create an experiment from TOML text. The configuration is validated.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_from_toml(toml: *const c_char, out: *mut *mut PmExperiment) -> PmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let text = match str_arg(toml, "toml") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml_str(text).and_then(|c| c.validate().map(|_| c)) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(PmExperiment { config }));
                PmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `exp` must come from a `pm_experiment_from_*` call, or be null.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_free(exp: *mut PmExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Override seed and train count; zero `trains` keeps the configured value.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_set_run(exp: *mut PmExperiment, seed: u64, trains: usize) -> PmStatus {
    let Some(exp) = exp.as_mut() else {
        return null("experiment");
    };
    exp.config.seed = seed;
    if trains > 0 {
        exp.config.trains = trains;
    }
    PmStatus::Ok
}

/// Directory that commands write their CSV/JSON outputs to.
///
/// # Safety
/// `exp` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_set_output_dir(exp: *mut PmExperiment, dir: *const c_char) -> PmStatus {
    let Some(exp) = exp.as_mut() else {
        return null("experiment");
    };
    match str_arg(dir, "dir") {
        Ok(d) => {
            exp.config.output_dir = PathBuf::from(d);
            PmStatus::Ok
        }
        Err(s) => s,
    }
}

/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_derived(exp: *const PmExperiment, out: *mut PmDerived) -> PmStatus {
    guard(|| {
        let (Some(exp), Some(out)) = (exp.as_ref(), out.as_mut()) else {
            return null("experiment or out");
        };
        match exp.config.physical() {
            Ok(p) => {
                *out = PmDerived {
                    beta: p.beta,
                    chi: p.chi,
                    sigma_th: p.sigma_th,
                    sigma_m: p.sigma_m,
                };
                PmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run the noise-floor command (writes its outputs) and report the first angle.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_run_noise_floor(exp: *const PmExperiment, out: *mut PmNoiseFloor) -> PmStatus {
    guard(|| {
        let (Some(exp), Some(out)) = (exp.as_ref(), out.as_mut()) else {
            return null("experiment or out");
        };
        match runner::noise_floor(&exp.config) {
            Ok(r) => match r.rows.first() {
                Some(row) => {
                    *out = PmNoiseFloor {
                        conditional_width: row.conditional_width,
                        nonconditional_width: row.nonconditional_width,
                        conditional_ratio: row.conditional_ratio,
                        nonconditional_ratio: row.nonconditional_ratio,
                        sigma_m: row.sigma_m,
                    };
                    PmStatus::Ok
                }
                None => invalid("configuration has no angles"),
            },
            Err(e) => fail(e),
        }
    })
}

/// Resonant response `H' = D / (D^2 + 1)` with `D = beta x_n`.
#[no_mangle]
pub extern "C" fn pm_homodyne_response(x_n: f64, beta: f64) -> f64 {
    homodyne_eq1(x_n, beta)
}

/// Both roots `D` of the resonant response for a given `H'`.
///
/// # Safety
/// `lower` and `upper` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pm_invert_response(h_prime: f64, lower: *mut f64, upper: *mut f64) -> PmStatus {
    let (Some(lo), Some(up)) = (lower.as_mut(), upper.as_mut()) else {
        return null("lower or upper");
    };
    match invert_transduction(h_prime) {
        Ok(b) => {
            *lo = b.lower;
            *up = b.upper;
            PmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Density of `H'` for a thermal state with detuning SD `sigma_delta`.
#[no_mangle]
pub extern "C" fn pm_thermal_pdf(h_prime: f64, sigma_delta: f64) -> f64 {
    thermal_pdf(h_prime, sigma_delta)
}

/// Analytic variance of an estimator at angle `theta` after delay `t`.
///
/// # Safety
/// `modes` must point to `n_modes` entries and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pm_conditional_variance(
    estimator: PmEstimator,
    theta: f64,
    t: f64,
    modes: *const PmModeTerm,
    n_modes: usize,
    out: *mut f64,
) -> PmStatus {
    if modes.is_null() || out.is_null() {
        return null("modes or out");
    }
    if n_modes == 0 {
        return invalid("at least one mode is required");
    }
    let terms: Vec<ModeTerm> = std::slice::from_raw_parts(modes, n_modes)
        .iter()
        .map(|m| ModeTerm {
            ratio: m.ratio,
            gamma: m.gamma,
            var_q: m.var_q,
        })
        .collect();
    *out = analytic_variance(estimator.into(), theta, t, &terms);
    PmStatus::Ok
}

/// Bins on a symmetric projection axis of the given half width and step.
#[no_mangle]
pub extern "C" fn pm_axis_len(half_width: f64, step: f64) -> usize {
    Axis::symmetric(half_width, step).map_or(0, |a| a.len)
}

/// Filtered back-projection of binned marginals.
///
/// `values` holds `n_angles` rows of `pm_axis_len(axis_half, step)` densities,
/// row-major. The grid spans `[-grid_half, grid_half]` in both quadratures
/// with the same step.
///
/// # Safety
/// `angles` must hold `n_angles` values, `values` the full table, and `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn pm_inverse_radon(
    angles: *const f64,
    n_angles: usize,
    values: *const f64,
    axis_half: f64,
    step: f64,
    grid_half: f64,
    out: *mut *mut PmDensity,
) -> PmStatus {
    guard(|| {
        if angles.is_null() || values.is_null() || out.is_null() {
            return null("angles, values or out");
        }
        let axis = match Axis::symmetric(axis_half, step) {
            Ok(a) => a,
            Err(e) => return fail(e),
        };
        let angles = std::slice::from_raw_parts(angles, n_angles).to_vec();
        let table = std::slice::from_raw_parts(values, n_angles * axis.len);
        let proj = Projections {
            angles,
            axis,
            values: table.chunks(axis.len).map(<[f64]>::to_vec).collect(),
        };
        let grid = GridSpec { half_width: grid_half, step };
        match inverse_radon(&proj, &grid, &ReconOptions::default()) {
            Ok(density) => {
                *out = Box::into_raw(Box::new(PmDensity { density }));
                PmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Points per grid side; the density holds `n * n` values.
///
/// # Safety
/// `d` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pm_density_side(d: *const PmDensity) -> usize {
    d.as_ref().map_or(0, |d| d.density.n())
}

/// Coordinate of grid index `k` along either quadrature.
///
/// # Safety
/// `d` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pm_density_point(d: *const PmDensity, k: usize) -> f64 {
    d.as_ref().map_or(f64::NAN, |d| d.density.axis.point(k))
}

/// Row-major values, `value[i * n + j]` at `(x_i, p_j)`. Borrowed from the handle.
///
/// # Safety
/// `d` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pm_density_values(d: *const PmDensity) -> *const f64 {
    d.as_ref().map_or(std::ptr::null(), |d| d.density.values.as_ptr())
}

/// # Safety
/// `d` must come from [`pm_inverse_radon`], or be null.
#[no_mangle]
pub unsafe extern "C" fn pm_density_free(d: *mut PmDensity) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}
