//! Posterior mode of the transformed hyperparameters, curvature at the mode
//! and hyperparameter draws from the resulting Gaussian approximation.

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nelder_mead::{minimize, SimplexOptions, SimplexResult};
use crate::error::{invalid, ElkError, Result};
use crate::geometry::MultiresBasis;
use crate::model::{latent_posterior, transform, Dataset, LatentModel, Likelihood, PriorSpec, Response};
use crate::precision::{HyperParams, NormalizationSpline, Scheme};
use crate::rng::{stream_rng, ElkRng};

pub const FIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub restarts: usize,
    pub max_evals: usize,
    pub simplex_tol: f64,
    pub initial_step: f64,
    pub restart_jitter: f64,
    pub hessian_step: f64,
    pub n_hyper_samples: usize,
    pub record_timing: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            restarts: 3,
            max_evals: 2000,
            simplex_tol: 1e-5,
            initial_step: 0.5,
            restart_jitter: 0.1,
            hessian_step: 1e-3,
            n_hyper_samples: 100,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub optimize_seconds: f64,
    pub hessian_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub model_hash: String,
    pub seed: u64,
    pub settings: FitSettings,
    pub basis: MultiresBasis,
    pub scheme: Scheme,
    pub priors: PriorSpec,
    pub splines: Vec<NormalizationSpline>,
    pub dataset: Dataset,
    pub init_transformed: Vec<f64>,
    pub init_log_posterior: f64,
    pub mode_transformed: Vec<f64>,
    pub mode: HyperParams,
    pub log_posterior: f64,
    pub evaluations: usize,
    /// Negative log posterior Hessian on the transformed scale.
    pub hessian: Vec<Vec<f64>>,
    pub hessian_jitter: f64,
    pub ridge_degenerate: bool,
    /// Covariance of the Gaussian approximation (inverse Hessian after repair).
    pub covariance: Vec<Vec<f64>>,
    pub hyper_samples: Vec<HyperParams>,
    #[serde(default)]
    pub timing: Option<Timing>,
}

impl FitResult {
    /// Rebuilds the latent model the fit was computed on.
    pub fn latent_model(&self) -> Result<LatentModel> {
        LatentModel::new(self.dataset.clone(), self.basis.clone(), self.scheme, self.priors.clone(), Some(self.splines.clone()), 0)
    }

    /// Posterior standard deviations of the transformed coordinates.
    pub fn posterior_sd(&self) -> Vec<f64> {
        (0..self.covariance.len()).map(|i| self.covariance[i][i].sqrt()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: FitResult = serde_json::from_str(s)?;
        if fit.schema_version != FIT_SCHEMA_VERSION {
            return Err(ElkError::Parse(format!("unsupported fit schema version {}", fit.schema_version)));
        }
        Ok(fit)
    }
}

/// Content hash of everything that determines the model.
pub fn model_hash(model: &LatentModel) -> Result<String> {
    let doc = serde_json::json!({
        "basis": model.basis,
        "scheme": model.scheme,
        "priors": model.priors,
        "dataset": model.dataset,
    });
    let digest = Sha256::digest(serde_json::to_vec(&doc)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Starting hyperparameters: data variance split evenly, ranges at their prior medians.
pub fn default_init(model: &LatentModel) -> HyperParams {
    let l = model.n_layers();
    let (s2, n2) = match &model.dataset.response {
        Response::Gaussian { values } => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-6);
            (0.8 * var, 0.2 * var)
        }
        Response::Binomial { .. } => (1.0, 0.1),
    };
    HyperParams { sigma2_s: s2, alpha: vec![1.0 / l as f64; l], rho: model.range_medians().to_vec(), sigma2_n: n2, scheme: model.scheme }
}

/// Log posterior of the transformed hyperparameters, reusing the previous latent mode as a Newton start.
pub struct Objective<'a> {
    model: &'a LatentModel,
    warm: RefCell<Option<Vec<f64>>>,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a LatentModel) -> Self {
        Objective { model, warm: RefCell::new(None) }
    }

    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        let h = self.model.untransform(theta)?;
        let lp = self.model.log_prior_transformed(theta)?;
        let warm = self.warm.borrow().clone();
        let post = latent_posterior(self.model, &h, warm.as_deref())?;
        if self.model.likelihood() == Likelihood::BinomialLogit {
            *self.warm.borrow_mut() = Some(post.mode.clone());
        }
        let v = post.log_marginal + lp;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ElkError::NonFiniteObjective(format!("log posterior at {theta:?}")))
        }
    }

    fn neg(&self, theta: &[f64]) -> f64 {
        self.log_posterior(theta).map(|v| -v).unwrap_or(f64::INFINITY)
    }
}

/// Nelder–Mead from `x0`, then `settings.restarts` runs from jittered copies of the best point.
/// Returns the best run and the total number of objective evaluations.
pub fn minimize_with_restarts(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    settings: &FitSettings,
    rng: &mut ElkRng,
) -> Result<(SimplexResult, usize)> {
    let opts = SimplexOptions { max_evals: settings.max_evals, diameter_tol: settings.simplex_tol, initial_step: settings.initial_step };
    let mut best = minimize(&f, x0, opts);
    let mut evaluations = best.evals;
    for _ in 0..settings.restarts {
        let mut start = None;
        for _ in 0..100 {
            let cand: Vec<f64> = best.x.iter().map(|v| v + settings.restart_jitter * rng.sample::<f64, _>(StandardNormal)).collect();
            evaluations += 1;
            if f(&cand).is_finite() {
                start = Some(cand);
                break;
            }
        }
        let start = start.ok_or_else(|| ElkError::NonFiniteObjective("no finite restart point in 100 attempts".into()))?;
        let r = minimize(&f, &start, SimplexOptions { initial_step: settings.restart_jitter.max(settings.simplex_tol * 10.0), ..opts });
        evaluations += r.evals;
        if r.value < best.value {
            best = r;
        }
    }
    if !best.value.is_finite() {
        return Err(ElkError::NonFiniteObjective("optimizer found no finite value".into()));
    }
    Ok((best, evaluations))
}

pub fn fit(model: &LatentModel, init: &HyperParams, settings: &FitSettings, seed: u64) -> Result<FitResult> {
    init.validate(model.n_layers())?;
    if init.scheme != model.scheme {
        return Err(invalid!("initial hyperparameters use a different scheme than the model"));
    }
    let obj = Objective::new(model);
    let theta0 = transform(init);
    let init_lp = obj.log_posterior(&theta0)?;
    let mut rng = stream_rng(seed, 0);
    let started = Instant::now();

    let (best, mut evaluations) = minimize_with_restarts(|t| obj.neg(t), &theta0, settings, &mut rng)?;
    evaluations += 1;
    let optimize_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let hess = central_hessian(|t| obj.neg(t), &best.x, settings.hessian_step)?;
    evaluations += 2 * best.x.len() * best.x.len() + 1;
    let repaired = repair_hessian(&hess);
    let hessian_seconds = started.elapsed().as_secs_f64();

    let cov_chol = repaired
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| ElkError::Numerical("hyperparameter covariance is not positive definite".into()))?;
    let l = cov_chol.l();
    let mut hyper_samples = Vec::with_capacity(settings.n_hyper_samples);
    let mut attempts = 0;
    while hyper_samples.len() < settings.n_hyper_samples {
        attempts += 1;
        if attempts > 100 * settings.n_hyper_samples.max(1) {
            return Err(ElkError::Numerical("hyperparameter draws keep overflowing".into()));
        }
        let z = DVector::from_iterator(best.x.len(), (0..best.x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let th: Vec<f64> = best.x.iter().zip((&l * z).iter()).map(|(m, d)| m + d).collect();
        if let Ok(h) = model.untransform(&th) {
            hyper_samples.push(h);
        }
    }

    let mode = model.untransform(&best.x)?;
    for (l, (k, s)) in mode.kappas(&model.basis).iter().zip(&model.splines).enumerate() {
        if !s.in_range(*k) {
            log::warn!("posterior mode puts layer {} at κ = {k}, outside its normalization spline range {:?}", l + 1, s.valid_range);
        }
    }
    let to_rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        model_hash: model_hash(model)?,
        seed,
        settings: settings.clone(),
        basis: model.basis.clone(),
        scheme: model.scheme,
        priors: model.priors.clone(),
        splines: model.splines.clone(),
        dataset: model.dataset.clone(),
        init_transformed: theta0,
        init_log_posterior: init_lp,
        mode,
        mode_transformed: best.x,
        log_posterior: -best.value,
        evaluations,
        hessian: to_rows(&hess),
        hessian_jitter: repaired.jitter,
        ridge_degenerate: repaired.ridge_degenerate,
        covariance: to_rows(&repaired.covariance),
        hyper_samples,
        timing: settings.record_timing.then_some(Timing { optimize_seconds, hessian_seconds }),
    })
}

/// Central-difference Hessian of `f` with per-coordinate step `h`.
pub fn central_hessian(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut at = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in d {
            y[i] += s;
        }
        f(&y)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        hess[(i, i)] = v;
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)])) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(ElkError::NonFiniteObjective("Hessian evaluation left the finite region".into()));
    }
    Ok(hess)
}

pub struct RepairedHessian {
    pub covariance: DMatrix<f64>,
    pub jitter: f64,
    pub ridge_degenerate: bool,
}

/// Inverts the Hessian, adding diagonal jitter if needed; clamps eigenvalues as a last resort.
pub fn repair_hessian(h: &DMatrix<f64>) -> RepairedHessian {
    let n = h.nrows();
    let scale = h.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut jitter = 0.0;
    for k in 0..7 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return RepairedHessian { covariance: ch.inverse(), jitter, ridge_degenerate: false };
        }
        jitter = scale * 1e-8 * 10f64.powi(k);
    }
    let eig = h.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let floor = (1e-3 * top).max(1.0);
    let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&v| 1.0 / v.max(floor)));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    log::warn!("Hessian not positive definite after jitter; clamped eigenvalues at {floor}");
    RepairedHessian { covariance: 0.5 * (&cov + cov.transpose()), jitter, ridge_degenerate: true }
}
