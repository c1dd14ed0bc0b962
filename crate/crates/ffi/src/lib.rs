//! C ABI for `rmd-core`.
//!
//! Every fallible function returns an [`RmdStatus`]. On failure the message is
//! kept per thread and can be read with [`rmd_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`*_estimate` functions and released with
//! the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rmd_core::eval::{msfe, wlr_test, ForecastRecord};
use rmd_core::rmdn::{RmdnConfig, ThetaParticleSystem};
use rmd_core::rmdx::{rmd_x_estimate, RmdxConfig, RmdxResult};
use rmd_core::statespace::{filter_series, mle_fit, MleOptions, Quarter};
use rmd_core::{InclusionPath, LinearGaussianModel, ModelFamily, RmdError, TimeSeries};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    UnderIdentified = 3,
    EmptySubset = 4,
    DegenerateModel = 5,
    ConvergenceFailure = 6,
    EstimationFailure = 7,
    FilterDegeneracy = 8,
    InvalidState = 9,
    EvaluationFailure = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&RmdError> for RmdStatus {
    fn from(e: &RmdError) -> Self {
        match e {
            RmdError::InvalidInput(_) | RmdError::Json(_) => RmdStatus::InvalidInput,
            RmdError::UnderIdentified { .. } => RmdStatus::UnderIdentified,
            RmdError::EmptySubset(_) => RmdStatus::EmptySubset,
            RmdError::DegenerateModel(_) => RmdStatus::DegenerateModel,
            RmdError::ConvergenceFailure { .. } => RmdStatus::ConvergenceFailure,
            RmdError::EstimationFailure(_) => RmdStatus::EstimationFailure,
            RmdError::FilterDegeneracy { .. } => RmdStatus::FilterDegeneracy,
            RmdError::InvalidState(_) => RmdStatus::InvalidState,
            RmdError::EvaluationFailure(_) => RmdStatus::EvaluationFailure,
            RmdError::Io(_) | RmdError::Csv(_) => RmdStatus::Io,
        }
    }
}

/// Result of a weighted likelihood ratio test of model a against model b.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmdWlr {
    pub wlr_hat: f64,
    pub sigma_hat: f64,
    pub t_stat: f64,
    /// Standard normal CDF of `t_stat`.
    pub p_right: f64,
}

/// Scalar linear-Gaussian model
/// x_t = state_const + state_coef x_{t-1} + state_sd e_t, y_t = x_t + obs_sd u_t.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmdModel {
    pub state_const: f64,
    pub state_coef: f64,
    pub state_sd: f64,
    pub obs_sd: f64,
    pub init_mean: f64,
    pub init_var: f64,
}

/// Quarterly time series.
pub struct RmdSeries(TimeSeries);

/// Aggregated RMD-X estimate.
pub struct RmdRmdx(RmdxResult);

/// Sequential RMD-N particle system.
pub struct RmdRmdn(ThetaParticleSystem);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Fallible = Result<(), (RmdStatus, String)>;

fn fail<T>(status: RmdStatus, msg: impl Into<String>) -> Result<T, (RmdStatus, String)> {
    Err((status, msg.into()))
}

fn core<T>(r: rmd_core::Result<T>) -> Result<T, (RmdStatus, String)> {
    r.map_err(|e| (RmdStatus::from(&e), e.to_string()))
}

fn guard(f: impl FnOnce() -> Fallible) -> RmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rmd".into());
            RmdStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), (RmdStatus, String)> {
    if p.is_null() {
        fail(RmdStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (RmdStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize) -> Fallible {
    if src.len() > cap {
        return fail(RmdStatus::BufferTooSmall, format!("need room for {} values, got {cap}", src.len()));
    }
    if !src.is_empty() {
        nonnull(out, "output buffer")?;
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn family(tag: *const c_char) -> Result<ModelFamily, (RmdStatus, String)> {
    nonnull(tag, "model family")?;
    let s = CStr::from_ptr(tag)
        .to_str()
        .or_else(|_| fail(RmdStatus::InvalidInput, "model family is not UTF-8"))?;
    Ok(ModelFamily::from_tag(core(s.parse())?))
}

unsafe fn write<T>(out: *mut T, v: T) -> Fallible {
    nonnull(out, "output pointer")?;
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rmd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_series_new(
    values: *const f64,
    len: usize,
    start_year: i32,
    start_quarter: u8,
    out: *mut *mut RmdSeries,
) -> RmdStatus {
    guard(|| {
        let v = slice(values, len, "values")?.to_vec();
        let start = core(Quarter::new(start_year, start_quarter))?;
        let s = core(TimeSeries::from_values(start, v))?;
        write(out, Box::into_raw(Box::new(RmdSeries(s))))
    })
}

/// Read a `date,value` CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_series_from_csv(path: *const c_char, out: *mut *mut RmdSeries) -> RmdStatus {
    guard(|| {
        nonnull(path, "path")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .or_else(|_| fail(RmdStatus::InvalidInput, "path is not UTF-8"))?;
        let s = core(rmd_core::data::load_series(Path::new(p)))?;
        write(out, Box::into_raw(Box::new(RmdSeries(s))))
    })
}

/// # Safety
/// `series` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_series_len(series: *const RmdSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `series` must come from `rmd_series_new`/`rmd_series_from_csv` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_series_free(series: *mut RmdSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Kalman filter with missing observations. `include` holds one byte per
/// observation (nonzero = observed) or is NULL for all observed. Filtered
/// means and variances are written to buffers of at least `len` doubles.
///
/// # Safety
/// Pointers must be valid for the stated lengths; output buffers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_kalman_filter(
    series: *const RmdSeries,
    model: *const RmdModel,
    include: *const u8,
    out_means: *mut f64,
    out_vars: *mut f64,
    out_loglik: *mut f64,
) -> RmdStatus {
    guard(|| {
        nonnull(series, "series")?;
        nonnull(model, "model")?;
        let s = &(*series).0;
        let m = *model;
        let model = LinearGaussianModel {
            state_const: m.state_const,
            state_coef: m.state_coef,
            state_sd: m.state_sd,
            obs_sd: m.obs_sd,
            init_mean: m.init_mean,
            init_var: m.init_var,
        };
        let path = if include.is_null() {
            InclusionPath::all(s.len())
        } else {
            let flags: Vec<bool> = std::slice::from_raw_parts(include, s.len()).iter().map(|b| *b != 0).collect();
            InclusionPath::from_bools(&flags)
        };
        let out = core(filter_series(&model, s, &path))?;
        if !out_means.is_null() {
            copy_out(&out.means(), out_means, s.len())?;
        }
        if !out_vars.is_null() {
            let vars: Vec<f64> = out.filtered.iter().map(|b| b.var).collect();
            copy_out(&vars, out_vars, s.len())?;
        }
        if !out_loglik.is_null() {
            *out_loglik = out.loglik;
        }
        Ok(())
    })
}

/// Full-data maximum likelihood. `theta` receives the natural parameters;
/// `theta_len` their count.
///
/// # Safety
/// `theta` must hold `theta_cap` doubles; other outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_mle_fit(
    series: *const RmdSeries,
    family_tag: *const c_char,
    theta: *mut f64,
    theta_cap: usize,
    theta_len: *mut usize,
    loglik: *mut f64,
) -> RmdStatus {
    guard(|| {
        nonnull(series, "series")?;
        let fam = family(family_tag)?;
        let s = &(*series).0;
        let fit = core(mle_fit(&fam, s, &InclusionPath::all(s.len()), &MleOptions::default()))?;
        copy_out(&fit.theta, theta, theta_cap)?;
        if !theta_len.is_null() {
            *theta_len = fit.theta.len();
        }
        if !loglik.is_null() {
            *loglik = fit.loglik;
        }
        Ok(())
    })
}

/// RMD-X: fit `n_paths` random fixed-size inclusion paths and aggregate.
///
/// # Safety
/// `series` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdx_estimate(
    series: *const RmdSeries,
    family_tag: *const c_char,
    beta: f64,
    n_paths: usize,
    h_max: usize,
    seed: u64,
    out: *mut *mut RmdRmdx,
) -> RmdStatus {
    guard(|| {
        nonnull(series, "series")?;
        let fam = family(family_tag)?;
        let cfg = RmdxConfig {
            beta,
            n_paths,
            h_max,
            seed,
            ..Default::default()
        };
        let res = core(rmd_x_estimate(&fam, &(*series).0, &cfg))?;
        write(out, Box::into_raw(Box::new(RmdRmdx(res))))
    })
}

/// # Safety
/// `res` must be a live handle; `theta` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdx_theta(res: *const RmdRmdx, theta: *mut f64, cap: usize, len: *mut usize) -> RmdStatus {
    guard(|| {
        nonnull(res, "result")?;
        let t = &(*res).0.theta_bar;
        copy_out(t, theta, cap)?;
        if !len.is_null() {
            *len = t.len();
        }
        Ok(())
    })
}

/// Path-averaged filtered means, one per observation.
///
/// # Safety
/// `res` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdx_filtered_means(res: *const RmdRmdx, out: *mut f64, cap: usize) -> RmdStatus {
    guard(|| {
        nonnull(res, "result")?;
        copy_out(&(*res).0.x_bar, out, cap)
    })
}

/// Mean and variance of the path mixture forecast of the h-step average.
///
/// # Safety
/// `res` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdx_forecast(res: *const RmdRmdx, h: usize, mean: *mut f64, var: *mut f64) -> RmdStatus {
    guard(|| {
        nonnull(res, "result")?;
        let Some(mix) = (*res).0.mixture(h) else {
            return fail(RmdStatus::InvalidInput, format!("horizon {h} was not computed"));
        };
        write(mean, mix.mean())?;
        write(var, mix.variance())
    })
}

/// # Safety
/// `res` must come from `rmd_rmdx_estimate` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdx_free(res: *mut RmdRmdx) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Create an RMD-N particle system for at most `horizon` observations.
/// `inner_cap` = 0 keeps every inner component.
///
/// # Safety
/// `family_tag` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_new(
    family_tag: *const c_char,
    beta: f64,
    n_theta: usize,
    inner_cap: usize,
    seed: u64,
    init_mean: f64,
    horizon: usize,
    out: *mut *mut RmdRmdn,
) -> RmdStatus {
    guard(|| {
        let fam = family(family_tag)?;
        let cfg = RmdnConfig {
            n_theta,
            inner_cap: (inner_cap > 0).then_some(inner_cap),
            seed,
            ..Default::default()
        };
        let sys = core(ThetaParticleSystem::new(&fam, beta, &cfg, init_mean, horizon))?;
        write(out, Box::into_raw(Box::new(RmdRmdn(sys))))
    })
}

/// Assimilate one observation and rejuvenate if the effective sample size
/// has collapsed.
///
/// # Safety
/// `sys` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_update(sys: *mut RmdRmdn, y: f64) -> RmdStatus {
    guard(|| {
        nonnull(sys, "system")?;
        let s = &mut (*sys).0;
        core(s.rmd_n_update(y))?;
        core(s.maybe_rejuvenate())?;
        Ok(())
    })
}

/// # Safety
/// `sys` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_log_evidence(sys: *const RmdRmdn) -> f64 {
    sys.as_ref().map_or(f64::NAN, |s| s.0.log_evidence)
}

/// # Safety
/// `sys` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_filtered_mean(sys: *const RmdRmdn) -> f64 {
    sys.as_ref().map_or(f64::NAN, |s| s.0.filtered_mean())
}

/// Log one-step predictive density of `y`.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_log_predictive(sys: *const RmdRmdn, y: f64, out: *mut f64) -> RmdStatus {
    guard(|| {
        nonnull(sys, "system")?;
        write(out, core((*sys).0.log_predictive_density(y))?)
    })
}

/// Mean and variance of the h-step average forecast.
///
/// # Safety
/// `sys` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_forecast(sys: *const RmdRmdn, h: usize, mean: *mut f64, var: *mut f64) -> RmdStatus {
    guard(|| {
        nonnull(sys, "system")?;
        let f = core((*sys).0.forecast_average(h, None))?;
        write(mean, f.mean)?;
        write(var, f.var)
    })
}

/// Smoothed inclusion probabilities; only after all `horizon` observations.
///
/// # Safety
/// `sys` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_smoothed_inclusion(sys: *const RmdRmdn, out: *mut f64, cap: usize) -> RmdStatus {
    guard(|| {
        nonnull(sys, "system")?;
        let p = core((*sys).0.smoothed_inclusion())?;
        copy_out(&p.probs, out, cap)
    })
}

/// Weighted posterior quantiles, row-major `[param][prob]`.
///
/// # Safety
/// `probs` must hold `n_probs` doubles and `out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_posterior_quantiles(
    sys: *const RmdRmdn,
    probs: *const f64,
    n_probs: usize,
    out: *mut f64,
    cap: usize,
) -> RmdStatus {
    guard(|| {
        nonnull(sys, "system")?;
        let p = slice(probs, n_probs, "probs")?;
        if p.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return fail(RmdStatus::InvalidInput, "probabilities must lie in [0, 1]");
        }
        let q: Vec<f64> = (*sys).0.posterior_quantiles(p).into_iter().flatten().collect();
        copy_out(&q, out, cap)
    })
}

/// # Safety
/// `sys` must come from `rmd_rmdn_new` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rmd_rmdn_free(sys: *mut RmdRmdn) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// WLR test on paired log predictive densities.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_wlr_test(a: *const f64, b: *const f64, n: usize, out: *mut RmdWlr) -> RmdStatus {
    guard(|| {
        let r = core(wlr_test(slice(a, n, "a")?, slice(b, n, "b")?))?;
        write(
            out,
            RmdWlr {
                wlr_hat: r.wlr_hat,
                sigma_hat: r.sigma_hat,
                t_stat: r.t_stat,
                p_right: r.p_right,
            },
        )
    })
}

/// Mean squared forecast error of paired forecasts and outcomes.
///
/// # Safety
/// `forecasts` and `realized` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_msfe(forecasts: *const f64, realized: *const f64, n: usize, out: *mut f64) -> RmdStatus {
    guard(|| {
        let f = slice(forecasts, n, "forecasts")?;
        let r = slice(realized, n, "realized")?;
        let recs: Vec<ForecastRecord> = f
            .iter()
            .zip(r)
            .enumerate()
            .map(|(i, (p, y))| ForecastRecord {
                origin: i,
                horizon: 1,
                point: *p,
                log_density: 0.0,
                realized: *y,
            })
            .collect();
        write(out, core(msfe(&recs, 1))?)
    })
}
