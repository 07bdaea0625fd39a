//! C ABI over the gpmpc library.
//!
//! Objects are opaque handles owned by the caller and released with the
//! matching `*_free`. Every function returns a [`GpmpcStatus`]; on failure the
//! message is available from [`gpmpc_last_error`] on the same thread. Panics
//! are caught at the boundary and reported as [`GpmpcStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gpmpc::cli::load_model_set;
use gpmpc::config::{dotted_table, parse_assignment, resolve_config};
use gpmpc::driver::{rollout, ConfidenceConfig, Intention, ModelSet, PositionDistribution};
use gpmpc::gp::{GaussianInput, NoiseMode, TrainedGP};
use gpmpc::nalgebra::{DMatrix, DVector};
use gpmpc::sim::{emit_plots, run_scenario, Scenario, SimConfig};
use gpmpc::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Domain = 6,
    SingularModel = 7,
    TrainingFailed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpmpcIntention {
    TurnRight = 0,
    TurnLeft = 1,
    StraightOn = 2,
}

impl From<GpmpcIntention> for Intention {
    fn from(i: GpmpcIntention) -> Self {
        match i {
            GpmpcIntention::TurnRight => Intention::TurnRight,
            GpmpcIntention::TurnLeft => Intention::TurnLeft,
            GpmpcIntention::StraightOn => Intention::StraightOn,
        }
    }
}

/// A trained scalar GP.
pub struct GpmpcGp(TrainedGP);

/// The three intention models.
pub struct GpmpcModelSet(ModelSet);

/// Simulation settings.
pub struct GpmpcSimConfig(SimConfig);

/// Outcome of a closed-loop run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GpmpcRunSummary {
    pub steps: usize,
    pub violation_steps: usize,
    pub fallback_steps: usize,
    /// Zero or one.
    pub degraded: u8,
    /// NaN without a target.
    pub min_margin: f64,
    /// NaN without a target.
    pub min_certificate: f64,
    pub min_speed: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GpmpcStatus {
    match e {
        Error::Usage(_) | Error::Dimension { .. } => GpmpcStatus::InvalidArgument,
        Error::Config(_) => GpmpcStatus::Config,
        Error::Data(_) | Error::Json(_) => GpmpcStatus::Data,
        Error::Io { .. } => GpmpcStatus::Io,
        Error::Domain(_) => GpmpcStatus::Domain,
        Error::SingularModel(..) => GpmpcStatus::SingularModel,
        Error::TrainingFailed(_) => GpmpcStatus::TrainingFailed,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> GpmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GpmpcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            GpmpcStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            GpmpcStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn string_arg(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::Usage(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice_arg<'a>(
    p: *const f64,
    len: usize,
    what: &'static str,
) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(
    p: *mut f64,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn gpmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Chebyshev tube multiplier for violation level `omega` in (0, 1).
#[no_mangle]
pub unsafe extern "C" fn gpmpc_chebyshev_multiplier(omega: f64, out_nu: *mut f64) -> GpmpcStatus {
    guard(|| {
        let out = out_ptr(out_nu, "out_nu")?;
        *out = ConfidenceConfig::new(omega)?.nu();
        Ok(())
    })
}

/// Loads a GP saved as JSON.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_gp_load(path: *const c_char, out: *mut *mut GpmpcGp) -> GpmpcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let gp = TrainedGP::load(string_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GpmpcGp(gp)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gpmpc_gp_free(gp: *mut GpmpcGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Input dimension of the GP.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_gp_dim(gp: *const GpmpcGp, out_dim: *mut usize) -> GpmpcStatus {
    guard(|| {
        *out_ptr(out_dim, "out_dim")? = non_null(gp, "gp")?.0.dim();
        Ok(())
    })
}

/// Posterior mean and noise-inclusive variance at a deterministic input of `dim` values.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_gp_predict(
    gp: *const GpmpcGp,
    x: *const f64,
    dim: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> GpmpcStatus {
    guard(|| {
        let gp = &non_null(gp, "gp")?.0;
        let p = gp.predict_point(slice_arg(x, dim, "x")?, NoiseMode::Include)?;
        *out_ptr(out_mean, "out_mean")? = p.mean;
        *out_ptr(out_variance, "out_variance")? = p.variance;
        Ok(())
    })
}

/// Predictive moments at a Gaussian input with mean `mean[dim]` and row-major
/// covariance `covariance[dim * dim]`.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_gp_predict_uncertain(
    gp: *const GpmpcGp,
    mean: *const f64,
    covariance: *const f64,
    dim: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> GpmpcStatus {
    guard(|| {
        let gp = &non_null(gp, "gp")?.0;
        let m = slice_arg(mean, dim, "mean")?;
        let c = slice_arg(covariance, dim * dim, "covariance")?;
        let input = GaussianInput::new(
            DVector::from_column_slice(m),
            DMatrix::from_row_slice(dim, dim, c),
        )?;
        let p = gp.predict_uncertain(&input)?;
        *out_ptr(out_mean, "out_mean")? = p.mean;
        *out_ptr(out_variance, "out_variance")? = p.variance;
        Ok(())
    })
}

/// Loads the `turn_right`, `turn_left` and `straight_on` archives under `dir`.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_models_load(
    dir: *const c_char,
    out: *mut *mut GpmpcModelSet,
) -> GpmpcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = load_model_set(&PathBuf::from(string_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(GpmpcModelSet(set)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gpmpc_models_free(models: *mut GpmpcModelSet) {
    if !models.is_null() {
        drop(Box::from_raw(models));
    }
}

/// Propagates a Gaussian position `steps` steps through one intention model.
/// Writes `steps + 1` means (`2` values each) and row-major covariances
/// (`4` values each), starting with the input distribution.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_models_rollout(
    models: *const GpmpcModelSet,
    intention: GpmpcIntention,
    mean: *const f64,
    covariance: *const f64,
    steps: usize,
    out_means: *mut f64,
    out_covariances: *mut f64,
) -> GpmpcStatus {
    guard(|| {
        let set = &non_null(models, "models")?.0;
        let m = slice_arg(mean, 2, "mean")?;
        let c = slice_arg(covariance, 4, "covariance")?;
        let start = PositionDistribution::new([m[0], m[1]], [[c[0], c[1]], [c[2], c[3]]])?;
        let pred = rollout(set.get(intention.into()), &start, steps)?;
        let means = slice_out(out_means, 2 * (steps + 1), "out_means")?;
        let covs = slice_out(out_covariances, 4 * (steps + 1), "out_covariances")?;
        for (j, p) in pred.steps.iter().enumerate() {
            means[2 * j..2 * j + 2].copy_from_slice(&p.mean);
            covs[4 * j..4 * j + 2].copy_from_slice(&p.covariance[0]);
            covs[4 * j + 2..4 * j + 4].copy_from_slice(&p.covariance[1]);
        }
        Ok(())
    })
}

/// Default simulation settings.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_config_new(out: *mut *mut GpmpcSimConfig) -> GpmpcStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(GpmpcSimConfig(SimConfig::default())));
        Ok(())
    })
}

/// Settings from a TOML or JSON file layered over the defaults.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_config_load(
    path: *const c_char,
    out: *mut *mut GpmpcSimConfig,
) -> GpmpcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = resolve_config(None, Some(&PathBuf::from(string_arg(path, "path")?)), &[])?;
        *out = Box::into_raw(Box::new(GpmpcSimConfig(cfg)));
        Ok(())
    })
}

/// Applies one `dotted.key=value` assignment. The settings are unchanged on failure.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_config_set(
    config: *mut GpmpcSimConfig,
    assignment: *const c_char,
) -> GpmpcStatus {
    guard(|| {
        let cfg = out_ptr(config, "config")?;
        let (k, v) = parse_assignment(&string_arg(assignment, "assignment")?)?;
        cfg.0 = cfg.0.with_layers(&[dotted_table(&k, v)])?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gpmpc_config_free(config: *mut GpmpcSimConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the built-in right-turn scenario with `seed`. When `out_dir` is not
/// null the log, summary and plots are written there.
#[no_mangle]
pub unsafe extern "C" fn gpmpc_simulate_right_turn(
    models: *const GpmpcModelSet,
    config: *const GpmpcSimConfig,
    seed: u64,
    out_dir: *const c_char,
    out_summary: *mut GpmpcRunSummary,
) -> GpmpcStatus {
    guard(|| {
        let set = &non_null(models, "models")?.0;
        let cfg = &non_null(config, "config")?.0;
        let summary = out_ptr(out_summary, "out_summary")?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(string_arg(out_dir, "out_dir")?))
        };
        let log = run_scenario(&Scenario::right_turn(seed), cfg, set)?;
        if let Some(d) = dir {
            log.save(&d)?;
            emit_plots(&log, d.join("plots"))?;
        }
        let s = &log.summary;
        *summary = GpmpcRunSummary {
            steps: s.steps,
            violation_steps: s.violation_steps,
            fallback_steps: s.fallback_steps,
            degraded: s.degraded as u8,
            min_margin: s.min_margin.unwrap_or(f64::NAN),
            min_certificate: s.min_certificate.unwrap_or(f64::NAN),
            min_speed: s.min_speed,
        };
        Ok(())
    })
}
