//! Posterior predictive draws at points and areas, and model-implied covariance curves.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use crate::cholesky::SymbolicCholesky;
use crate::error::{invalid, ElkError, Result};
use crate::geometry::Point;
use crate::model::{expit, latent_posterior, LatentModel};
use crate::precision::{HyperParams, PrecisionAssembler};
use crate::rng::stream_rng;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Linear predictor (latent scale).
    Eta,
    /// Observation scale: η plus nugget noise, mapped through logit⁻¹ for binomial data.
    Response,
    /// logit⁻¹(η).
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSettings {
    pub n_hyper: usize,
    pub draws_per_hyper: usize,
    pub scale: Scale,
    pub include_nugget: bool,
    /// Plug in the posterior mode instead of hyperparameter draws.
    pub use_mode: bool,
}

impl Default for PredictSettings {
    fn default() -> Self {
        PredictSettings { n_hyper: 100, draws_per_hyper: 10, scale: Scale::Response, include_nugget: true, use_mode: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// Linearly interpolated sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(draws: &[f64]) -> Summary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 { draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    Summary { mean, sd: var.sqrt(), q10: quantile_sorted(&s, 0.1), q50: quantile_sorted(&s, 0.5), q90: quantile_sorted(&s, 0.9) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub targets: Vec<String>,
    /// `n_targets × n_samples` draws.
    pub samples: Vec<Vec<f64>>,
    pub summaries: Vec<Summary>,
}

impl PredictionSet {
    pub fn from_samples(targets: Vec<String>, samples: Vec<Vec<f64>>) -> Self {
        let summaries = samples.iter().map(|s| summarize(s)).collect();
        PredictionSet { targets, samples, summaries }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn means(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean).collect()
    }
}

fn chosen_hypers(fit: &FitResult, use_mode: bool, n_hyper: usize) -> Result<Vec<HyperParams>> {
    if use_mode {
        return Ok(vec![fit.mode.clone()]);
    }
    if n_hyper == 0 || n_hyper > fit.hyper_samples.len() {
        return Err(invalid!("requested {n_hyper} hyperparameter samples, fit holds {}", fit.hyper_samples.len()));
    }
    Ok(fit.hyper_samples[..n_hyper].to_vec())
}

/// Posterior predictive draws at `locations`.
pub fn predict_points(
    fit: &FitResult,
    model: &LatentModel,
    locations: &[Point],
    covariates: Option<&[Vec<f64>]>,
    settings: &PredictSettings,
    seed: u64,
) -> Result<PredictionSet> {
    if let Some(i) = locations.iter().position(|&p| !model.basis.supports(p)) {
        return Err(invalid!("target {i} at {:?} lies outside the buffered lattice", locations[i]));
    }
    if settings.draws_per_hyper == 0 {
        return Err(invalid!("draws_per_hyper must be positive"));
    }
    let hypers = chosen_hypers(fit, settings.use_mode, settings.n_hyper)?;
    let t = model.target_matrix(locations, covariates)?;
    let per_hyper: Vec<Vec<Vec<f64>>> = hypers
        .par_iter()
        .enumerate()
        .map(|(k, h)| draw_block(model, &t, h, settings, seed, k as u64))
        .collect::<Result<_>>()?;
    let n_samples = hypers.len() * settings.draws_per_hyper;
    let mut samples = vec![Vec::with_capacity(n_samples); locations.len()];
    for block in per_hyper {
        for draw in block {
            for (row, v) in samples.iter_mut().zip(draw) {
                row.push(v);
            }
        }
    }
    let targets = (0..locations.len()).map(|i| i.to_string()).collect();
    Ok(PredictionSet::from_samples(targets, samples))
}

fn draw_block(
    model: &LatentModel,
    t: &SparseMatrix,
    h: &HyperParams,
    settings: &PredictSettings,
    seed: u64,
    k: u64,
) -> Result<Vec<Vec<f64>>> {
    let post = latent_posterior(model, h, None)?;
    let mut rng = stream_rng(seed, k + 1);
    let sd = h.sigma2_n.sqrt();
    let binomial = model.likelihood() == crate::model::Likelihood::BinomialLogit;
    (0..settings.draws_per_hyper)
        .map(|_| {
            let x = post.precision_factor.sample(&post.mode, &mut rng)?;
            let mut eta = t.mul_vec(&x)?;
            let noisy = settings.include_nugget || settings.scale == Scale::Response;
            if noisy {
                for e in eta.iter_mut() {
                    *e += sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let map_p = settings.scale == Scale::Probability || (settings.scale == Scale::Response && binomial);
            if map_p {
                eta.iter_mut().for_each(|e| *e = expit(*e));
            }
            Ok(eta)
        })
        .collect()
}

/// A target area: grid cells with optional weights (uniform if absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

/// Weighted means of joint grid draws over each area, draw by draw.
pub fn aggregate(grid: &PredictionSet, areas: &[Area]) -> Result<PredictionSet> {
    let n_samples = grid.samples.first().map_or(0, Vec::len);
    let mut samples = Vec::with_capacity(areas.len());
    for a in areas {
        if a.cells.is_empty() {
            return Err(invalid!("area {} has no cells", a.id));
        }
        let w: Vec<f64> = match &a.weights {
            Some(w) if w.len() == a.cells.len() => w.clone(),
            Some(_) => return Err(ElkError::DimensionMismatch(format!("area {} weights", a.id))),
            None => vec![1.0; a.cells.len()],
        };
        let total: f64 = w.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(invalid!("weights of area {} sum to {total}", a.id));
        }
        if let Some(&c) = a.cells.iter().find(|&&c| c >= grid.len()) {
            return Err(invalid!("area {} references grid cell {c} outside the grid", a.id));
        }
        let mut acc = vec![0.0; n_samples];
        for (&c, &wi) in a.cells.iter().zip(&w) {
            for (s, v) in acc.iter_mut().zip(&grid.samples[c]) {
                *s += wi * v;
            }
        }
        acc.iter_mut().for_each(|s| *s /= total);
        samples.push(acc);
    }
    Ok(PredictionSet::from_samples(areas.iter().map(|a| a.id.clone()).collect(), samples))
}

/// Area predictions from joint draws on a regular grid of points.
pub fn predict_areal(
    fit: &FitResult,
    model: &LatentModel,
    grid: &[Point],
    areas: &[Area],
    settings: &PredictSettings,
    seed: u64,
) -> Result<PredictionSet> {
    let g = predict_points(fit, model, grid, None, settings, seed)?;
    aggregate(&g, areas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Band {
    fn of(values: &[f64]) -> Band {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Band { median: quantile_sorted(&s, 0.5), q10: quantile_sorted(&s, 0.1), q90: quantile_sorted(&s, 0.9) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCurve {
    pub distances: Vec<f64>,
    pub covariance: Vec<Band>,
    pub correlation: Vec<Band>,
}

/// Covariance and correlation of the spatial field between the domain center and points
/// `d` to its right, for one set of hyperparameters.
pub fn implied_covariance_at(
    model: &LatentModel,
    asm: &PrecisionAssembler,
    symbolic: &Arc<SymbolicCholesky>,
    rows: &SparseMatrix,
    h: &HyperParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let kappas = h.kappas(&model.basis);
    let scales = asm.layer_scales(h, &kappas, &model.splines);
    let q = asm.assemble(&kappas, &scales)?;
    let f = symbolic.factor(&q)?;
    let m = model.n_basis();
    let dense_row = |i: usize| {
        let mut v = vec![0.0; m];
        for (r, c, x) in rows.triplets() {
            if r == i {
                v[c] = x;
            }
        }
        v
    };
    let a0 = dense_row(0);
    let s0 = f.solve(&a0)?;
    let var0: f64 = a0.iter().zip(&s0).map(|(a, b)| a * b).sum();
    let mut cov = Vec::with_capacity(rows.nrows());
    let mut corr = Vec::with_capacity(rows.nrows());
    let rows_t = rows.transpose();
    for i in 0..rows.nrows() {
        let (idx, val) = rows_t.col(i);
        let c: f64 = idx.iter().zip(val).map(|(&j, &v)| v * s0[j]).sum();
        let mut ad = vec![0.0; m];
        for (&j, &v) in idx.iter().zip(val) {
            ad[j] = v;
        }
        let vd = f.inverse_quadratic(&ad)?;
        cov.push(c);
        corr.push(if i == 0 { 1.0 } else { c / (var0 * vd).sqrt() });
    }
    Ok((cov, corr))
}

/// Model-implied covariance curves across hyperparameter samples (median and 80% band).
pub fn implied_covariance(fit: &FitResult, model: &LatentModel, distances: &[f64], n_hyper: usize, use_mode: bool) -> Result<CovarianceCurve> {
    let hypers = chosen_hypers(fit, use_mode, n_hyper)?;
    let c = model.basis.domain.center();
    let mut pts = vec![c];
    for &d in distances {
        if !(d >= 0.0) {
            return Err(invalid!("distances must be non-negative"));
        }
        let p = [c[0] + d, c[1]];
        if !model.basis.domain.contains(p) {
            return Err(invalid!("distance {d} leaves the domain"));
        }
        pts.push(p);
    }
    let rows = model.basis.basis_matrix(&pts)?;
    let asm = PrecisionAssembler::new(&model.basis);
    let symbolic = Arc::new(SymbolicCholesky::analyze(asm.pattern())?);
    let per: Vec<(Vec<f64>, Vec<f64>)> =
        hypers.par_iter().map(|h| implied_covariance_at(model, &asm, &symbolic, &rows, h)).collect::<Result<_>>()?;
    let band = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<Band> {
        (1..pts.len()).map(|i| Band::of(&per.iter().map(|p| pick(p)[i]).collect::<Vec<_>>())).collect()
    };
    Ok(CovarianceCurve { distances: distances.to_vec(), covariance: band(&|p| &p.0), correlation: band(&|p| &p.1) })
}
