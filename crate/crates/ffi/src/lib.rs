//! C ABI for elk.
//!
//! Every function returns an [`ElkStatus`]; on failure a message is available from
//! [`elk_last_error_message`] on the same thread. Fits are opaque [`ElkFit`] handles that
//! must be released with [`elk_fit_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use elk::geometry::{Domain, Point};
use elk::inference::{default_init, fit, predict_points, FitResult, PredictSettings, Scale};
use elk::io::RunConfig;
use elk::model::{Dataset, LatentModel};
use elk::scoring;
use elk::special::matern1_corr;
use elk::ElkError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElkStatus {
    Ok = 0,
    InvalidArgument = 1,
    Dimension = 2,
    NotPositiveDefinite = 3,
    Numerical = 4,
    NotConverged = 5,
    NonFiniteObjective = 6,
    MalformedRow = 7,
    Parse = 8,
    Study = 9,
    Io = 10,
    NullPointer = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&ElkError> for ElkStatus {
    fn from(e: &ElkError) -> Self {
        match e {
            ElkError::InvalidArgument(_) => ElkStatus::InvalidArgument,
            ElkError::DimensionMismatch(_) => ElkStatus::Dimension,
            ElkError::NotPositiveDefinite { .. } => ElkStatus::NotPositiveDefinite,
            ElkError::Numerical(_) => ElkStatus::Numerical,
            ElkError::NotConverged { .. } => ElkStatus::NotConverged,
            ElkError::NonFiniteObjective(_) => ElkStatus::NonFiniteObjective,
            ElkError::MalformedRow { .. } => ElkStatus::MalformedRow,
            ElkError::Parse(_) => ElkStatus::Parse,
            ElkError::Study(_) => ElkStatus::Study,
            ElkError::Io(_) => ElkStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, translating errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (ElkStatus, String)>) -> ElkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            ElkStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            ElkStatus::Panic
        }
    }
}

fn lib(e: ElkError) -> (ElkStatus, String) {
    (ElkStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (ElkStatus, String) {
    (ElkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (ElkStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], (ElkStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn points(xs: *const f64, ys: *const f64, n: usize) -> Result<Vec<Point>, (ElkStatus, String)> {
    let (x, y) = (slice(xs, n, "xs")?, slice(ys, n, "ys")?);
    Ok(x.iter().zip(y).map(|(&a, &b)| [a, b]).collect())
}

unsafe fn config(toml: *const c_char) -> Result<RunConfig, (ElkStatus, String)> {
    if toml.is_null() {
        return Ok(RunConfig::default());
    }
    let s = CStr::from_ptr(toml).to_str().map_err(|_| (ElkStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
    RunConfig::from_toml(s).map_err(lib)
}

/// A fitted model and the latent model rebuilt from it.
pub struct ElkFit {
    fit: FitResult,
    model: LatentModel,
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to `cap`).
/// Returns the full message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn elk_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fits a Gaussian-response model to `n` observations. `config_toml` holds the `[model]`,
/// `[priors]` and `[fit]` sections and `seed` of a run configuration, or is null for defaults.
/// The domain is the configured one or the bounding box of the locations.
///
/// # Safety
/// `xs`, `ys` and `values` must each point to `n` doubles; `config_toml` must be null or a
/// NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn elk_fit_gaussian(
    xs: *const f64,
    ys: *const f64,
    values: *const f64,
    n: usize,
    config_toml: *const c_char,
    out: *mut *mut ElkFit,
) -> ElkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config(config_toml)?;
        let locs = points(xs, ys, n)?;
        let data = Dataset::gaussian(locs, slice(values, n, "values")?.to_vec()).map_err(lib)?;
        let domain = match cfg.model.domain {
            Some(d) => d,
            None => Domain::bounding(&data.locations).map_err(lib)?,
        };
        let basis = cfg.model.layers.build(domain).map_err(lib)?;
        let model = LatentModel::new(data, basis, cfg.model.scheme, cfg.priors.clone(), None, cfg.model.spline_knots).map_err(lib)?;
        let fit = fit(&model, &default_init(&model), &cfg.fit, cfg.seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(ElkFit { fit, model }));
        Ok(())
    })
}

/// Restores a fit from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn elk_fit_from_json(json: *const c_char, out: *mut *mut ElkFit) -> ElkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let s = CStr::from_ptr(json).to_str().map_err(|_| (ElkStatus::InvalidArgument, "json is not UTF-8".to_string()))?;
        let fit = FitResult::from_json(s).map_err(lib)?;
        let model = fit.latent_model().map_err(lib)?;
        *out = Box::into_raw(Box::new(ElkFit { fit, model }));
        Ok(())
    })
}

/// Writes the fit's JSON document into `buf` (NUL-terminated). `needed` receives the document
/// length in bytes; if it does not fit, nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `fit` must come from this library; `buf` must be null or hold `cap` bytes; `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn elk_fit_to_json(fit: *const ElkFit, buf: *mut c_char, cap: usize, needed: *mut usize) -> ElkStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if needed.is_null() {
            return Err(null("needed"));
        }
        let s = f.fit.to_json().map_err(lib)?;
        *needed = s.len();
        if buf.is_null() || cap <= s.len() {
            return Err((ElkStatus::BufferTooSmall, format!("JSON needs {} bytes plus terminator", s.len())));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn elk_fit_free(fit: *mut ElkFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Posterior-mode spatial and nugget variances.
///
/// # Safety
/// `fit` must come from this library; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn elk_fit_mode_variances(fit: *const ElkFit, sigma2_s: *mut f64, sigma2_n: *mut f64) -> ElkStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if sigma2_s.is_null() || sigma2_n.is_null() {
            return Err(null("output"));
        }
        *sigma2_s = f.fit.mode.sigma2_s;
        *sigma2_n = f.fit.mode.sigma2_n;
        Ok(())
    })
}

/// Posterior predictive summaries of Y at `n` points from `n_hyper × draws_per_hyper` draws.
/// Any summary pointer may be null to skip it.
///
/// # Safety
/// `fit` must come from this library; `xs`, `ys` and every non-null output must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn elk_predict(
    fit: *const ElkFit,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    n_hyper: usize,
    draws_per_hyper: usize,
    seed: u64,
    mean: *mut f64,
    sd: *mut f64,
    q10: *mut f64,
    q50: *mut f64,
    q90: *mut f64,
) -> ElkStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let locs = points(xs, ys, n)?;
        let settings = PredictSettings { n_hyper, draws_per_hyper, scale: Scale::Response, include_nugget: true, use_mode: false };
        let set = predict_points(&f.fit, &f.model, &locs, None, &settings, seed).map_err(lib)?;
        let outs: [(*mut f64, fn(&elk::inference::predict::Summary) -> f64); 5] =
            [(mean, |s| s.mean), (sd, |s| s.sd), (q10, |s| s.q10), (q50, |s| s.q50), (q90, |s| s.q90)];
        for (p, get) in outs {
            if !p.is_null() {
                for (o, s) in slice_mut(p, n, "output")?.iter_mut().zip(&set.summaries) {
                    *o = get(s);
                }
            }
        }
        Ok(())
    })
}

/// Closed-form CRPS of N(mu, sigma²) at y.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn elk_crps_gaussian(mu: f64, sigma: f64, y: f64, out: *mut f64) -> ElkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = scoring::crps_gaussian(mu, sigma, y).map_err(lib)?;
        Ok(())
    })
}

/// Randomized central interval of a predictive on the grid {0, 1/N, …, 1}.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElkFuzzyInterval {
    pub n: usize,
    pub lower: usize,
    pub upper: usize,
    pub p_reject_lower: f64,
    pub p_reject_upper: f64,
}

/// Builds the fuzzy interval of a pmf over `n_points` = N + 1 grid values.
///
/// # Safety
/// `pmf` must hold `n_points` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn elk_fuzzy_interval(pmf: *const f64, n_points: usize, alpha: f64, out: *mut ElkFuzzyInterval) -> ElkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let iv = scoring::fuzzy_interval(slice(pmf, n_points, "pmf")?, alpha).map_err(lib)?;
        *out = ElkFuzzyInterval { n: iv.n, lower: iv.lower, upper: iv.upper, p_reject_lower: iv.p_reject_lower, p_reject_upper: iv.p_reject_upper };
        Ok(())
    })
}

fn to_lib(iv: &ElkFuzzyInterval) -> scoring::FuzzyInterval {
    scoring::FuzzyInterval { n: iv.n, lower: iv.lower, upper: iv.upper, p_reject_lower: iv.p_reject_lower, p_reject_upper: iv.p_reject_upper }
}

/// Fuzzy membership of an observed proportion.
///
/// # Safety
/// `interval` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn elk_fuzzy_coverage(interval: *const ElkFuzzyInterval, y: f64, out: *mut f64) -> ElkStatus {
    guard(|| {
        let iv = interval.as_ref().ok_or_else(|| null("interval"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = scoring::fuzzy_coverage(&to_lib(iv), y);
        Ok(())
    })
}

/// Width of a fuzzy interval.
///
/// # Safety
/// `interval` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn elk_fuzzy_width(interval: *const ElkFuzzyInterval, out: *mut f64) -> ElkStatus {
    guard(|| {
        let iv = interval.as_ref().ok_or_else(|| null("interval"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = scoring::fuzzy_width(&to_lib(iv));
        Ok(())
    })
}

/// Matérn ν = 1 correlation at distance `d` for effective range `rho`.
#[no_mangle]
pub extern "C" fn elk_matern1_corr(d: f64, rho: f64) -> f64 {
    matern1_corr(d, rho)
}
