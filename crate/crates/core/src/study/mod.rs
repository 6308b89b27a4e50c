//! Replicated simulation study: mixture-covariance fields, the 3×3 holdout design, lattice
//! models against a dense Matérn baseline, and aggregated pointwise, areal, binned and
//! correlation-curve scores.

pub mod baseline;
pub mod design;

use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, ElkError, Result};
use crate::geometry::{Domain, LayerSpec};
use crate::inference::{aggregate, default_init, fit, implied_covariance, predict_points, FitSettings, PredictSettings, Scale};
use crate::model::{Dataset, LatentModel, PriorSpec};
use crate::precision::{build_norm_splines, NormalizationSpline, Scheme, DEFAULT_SPLINE_KNOTS};
use crate::rng::{purpose, replicate_rng};
use crate::scoring::{bin_index, equal_width_edges, nearest_distances, report, score_gaussian, score_samples, ScoreReport, TargetScore};
use crate::special::{matern1_corr, CovModel};

use baseline::fit_matern_gp;
use design::{design_3x3, design_locations, regular_grid, Design, CENTRAL_CELL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StudyModel {
    Elk { name: String, scheme: Scheme, layers: LayerSpec },
    MaternGp { name: String },
}

impl StudyModel {
    pub fn name(&self) -> &str {
        match self {
            StudyModel::Elk { name, .. } | StudyModel::MaternGp { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub domain: Domain,
    pub n_obs: usize,
    pub nugget_sd: f64,
    pub cov: CovModel,
    /// Prediction grid is `grid × grid` cell centres.
    pub grid: usize,
    pub replicates: usize,
    pub seed: u64,
    pub models: Vec<StudyModel>,
    pub priors: PriorSpec,
    /// Distance-bin edges; `n_bins` equal-width bins over the observed range if absent.
    pub bin_edges: Option<Vec<f64>>,
    pub n_bins: usize,
    pub fit: FitSettings,
    pub predict_hypers: usize,
    pub draws_per_hyper: usize,
    /// Correlation curves are computed for the first `covfn_replicates` replicates.
    pub covfn_replicates: usize,
    pub covfn_hypers: usize,
    pub covfn_distances: Vec<f64>,
}

fn square() -> Domain {
    Domain { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0 }
}

fn unit_steps(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            domain: square(),
            n_obs: 400,
            nugget_sd: 0.1,
            cov: CovModel::two_scale_mixture(),
            grid: 70,
            replicates: 10,
            seed: 1,
            models: vec![
                StudyModel::Elk { name: "ELK-T".into(), scheme: Scheme::ElkT, layers: LayerSpec::knots(&[14, 40]) },
                StudyModel::MaternGp { name: "Matern-GP".into() },
            ],
            priors: PriorSpec::default(),
            bin_edges: None,
            n_bins: 8,
            fit: FitSettings { n_hyper_samples: 25, ..FitSettings::default() },
            predict_hypers: 25,
            draws_per_hyper: 40,
            covfn_replicates: 5,
            covfn_hypers: 25,
            covfn_distances: unit_steps(20),
        }
    }
}

impl StudyConfig {
    /// The full experiment: 800 observations, 100 replicates, fine 126×126 layer, three-layer ELK-F.
    pub fn full_scale() -> Self {
        StudyConfig {
            n_obs: 800,
            replicates: 100,
            models: vec![
                StudyModel::Elk { name: "ELK-T".into(), scheme: Scheme::ElkT, layers: LayerSpec::knots(&[14, 126]) },
                StudyModel::Elk { name: "ELK-F".into(), scheme: Scheme::ElkF, layers: LayerSpec::deltas(&[2.0 / 13.0, 1.0 / 13.0, 1.0 / 26.0]) },
                StudyModel::MaternGp { name: "Matern-GP".into() },
            ],
            fit: FitSettings::default(),
            predict_hypers: 100,
            draws_per_hyper: 10,
            covfn_replicates: 100,
            covfn_hypers: 100,
            ..StudyConfig::default()
        }
    }

    /// A seconds-scale run that exercises every stage.
    pub fn smoke() -> Self {
        StudyConfig {
            n_obs: 60,
            grid: 10,
            replicates: 1,
            models: vec![
                StudyModel::Elk { name: "ELK-T".into(), scheme: Scheme::ElkT, layers: LayerSpec { knots: Some(vec![4, 8]), deltas: None, buffer: 2 } },
                StudyModel::MaternGp { name: "Matern-GP".into() },
            ],
            fit: FitSettings { restarts: 0, max_evals: 150, simplex_tol: 1e-3, n_hyper_samples: 4, ..FitSettings::default() },
            predict_hypers: 4,
            draws_per_hyper: 25,
            covfn_replicates: 1,
            covfn_hypers: 4,
            covfn_distances: unit_steps(4),
            ..StudyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.n_obs < 2 || self.grid < 3 || self.replicates == 0 {
            return Err(invalid!("study needs n_obs ≥ 2, grid ≥ 3 and at least one replicate"));
        }
        if !(self.nugget_sd >= 0.0) {
            return Err(invalid!("nugget_sd must be non-negative"));
        }
        if self.models.is_empty() {
            return Err(invalid!("study needs at least one model"));
        }
        let mut names: Vec<&str> = self.models.iter().map(StudyModel::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!("model names must be unique"));
        }
        if self.predict_hypers == 0 || self.draws_per_hyper == 0 || self.covfn_hypers == 0 {
            return Err(invalid!("sample counts must be positive"));
        }
        if self.fit.n_hyper_samples < self.predict_hypers.max(self.covfn_hypers) {
            return Err(invalid!("fit.n_hyper_samples must cover predict_hypers and covfn_hypers"));
        }
        if let Some(e) = &self.bin_edges {
            if e.len() < 2 || e.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid!("bin_edges must be at least two increasing values"));
            }
        } else if self.n_bins == 0 {
            return Err(invalid!("n_bins must be positive"));
        }
        if self.covfn_distances.windows(2).any(|w| w[1] <= w[0]) || self.covfn_distances.first().is_some_and(|&d| d < 0.0) {
            return Err(invalid!("covfn_distances must be non-negative and increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Pointwise,
    Areal,
    CentralPointwise,
    CentralAreal,
    OuterPointwise,
    OuterAreal,
}

impl Block {
    pub const ALL: [Block; 6] =
        [Block::Pointwise, Block::Areal, Block::CentralPointwise, Block::CentralAreal, Block::OuterPointwise, Block::OuterAreal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Block::Pointwise => "pointwise",
            Block::Areal => "areal",
            Block::CentralPointwise => "central_pointwise",
            Block::CentralAreal => "central_areal",
            Block::OuterPointwise => "outer_pointwise",
            Block::OuterAreal => "outer_areal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub replicate: usize,
    pub model: String,
    pub block: Block,
    pub n: usize,
    pub rmse: f64,
    pub crps: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub replicate: usize,
    pub model: String,
    pub bin: usize,
    pub n: usize,
    pub rmse: Option<f64>,
    pub crps: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub replicate: usize,
    pub model: String,
    pub distance: f64,
    pub truth: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveError {
    pub replicate: usize,
    pub model: String,
    /// Trapezoid integral of |estimated − true correlation| over the curve distances.
    pub iae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutput {
    pub replicate: usize,
    pub scores: Vec<ScoreRow>,
    pub bins: Vec<BinRow>,
    pub curves: Vec<CurveRow>,
    pub curve_errors: Vec<CurveError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub block: Block,
    pub replicates: usize,
    pub rmse: f64,
    pub crps: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummaryRow {
    pub model: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: Option<f64>,
    pub n: usize,
    pub replicates: usize,
    pub rmse: Option<f64>,
    pub crps: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub config: StudyConfig,
    pub bin_edges: Vec<f64>,
    pub replicates: Vec<ReplicateOutput>,
    pub failed: Vec<FailedReplicate>,
    pub summary: Vec<SummaryRow>,
    pub bin_summary: Vec<BinSummaryRow>,
}

impl StudyOutput {
    pub fn summary_for(&self, model: &str, block: Block) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.model == model && r.block == block)
    }

    pub fn curve_errors(&self, model: &str) -> Vec<(usize, f64)> {
        self.replicates
            .iter()
            .flat_map(|r| r.curve_errors.iter())
            .filter(|e| e.model == model)
            .map(|e| (e.replicate, e.iae))
            .collect()
    }
}

/// Equal-width bins over the range of nearest-observation distances across all replicates.
fn default_bin_edges(cfg: &StudyConfig) -> Result<Vec<f64>> {
    let grid = regular_grid(&cfg.domain, cfg.grid);
    let mut all = vec![];
    for r in 0..cfg.replicates {
        all.extend(nearest_distances(&grid, &design_locations(cfg, r as u64))?);
    }
    equal_width_edges(&all, cfg.n_bins)
}

/// Trapezoid integral of |a − b| over the abscissae `x`.
pub fn integrated_abs_error(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (1..x.len()).map(|i| 0.5 * (x[i] - x[i - 1]) * ((a[i] - b[i]).abs() + (a[i - 1] - b[i - 1]).abs())).sum()
}

struct Prepared {
    splines: Vec<Option<Vec<NormalizationSpline>>>,
}

fn prepare(cfg: &StudyConfig) -> Result<Prepared> {
    let splines = cfg
        .models
        .iter()
        .map(|m| match m {
            StudyModel::Elk { layers, .. } => Ok(Some(build_norm_splines(&layers.build(cfg.domain)?, DEFAULT_SPLINE_KNOTS)?)),
            StudyModel::MaternGp { .. } => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { splines })
}

struct ModelScores {
    point: Vec<TargetScore>,
    area: Vec<TargetScore>,
    curve: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn run_elk(
    cfg: &StudyConfig,
    d: &Design,
    scheme: Scheme,
    layers: &LayerSpec,
    splines: &[NormalizationSpline],
    rep: u64,
    with_curve: bool,
) -> Result<ModelScores> {
    let basis = layers.build(cfg.domain)?;
    let data = Dataset::gaussian(d.obs.clone(), d.obs_y.clone())?;
    let model = LatentModel::new(data, basis, scheme, cfg.priors.clone(), Some(splines.to_vec()), DEFAULT_SPLINE_KNOTS)?;
    let fit_seed: u64 = replicate_rng(cfg.seed, rep, purpose::FIT).random();
    let fitted = fit(&model, &default_init(&model), &cfg.fit, fit_seed)?;
    let settings = PredictSettings {
        n_hyper: cfg.predict_hypers,
        draws_per_hyper: cfg.draws_per_hyper,
        scale: Scale::Response,
        include_nugget: true,
        use_mode: false,
    };
    let pred_seed: u64 = replicate_rng(cfg.seed, rep, purpose::PREDICT).random();
    let grid = predict_points(&fitted, &model, &d.grid, None, &settings, pred_seed)?;
    let areas = aggregate(&grid, &d.areas)?;
    let point = grid.samples.iter().zip(&d.grid_y).map(|(s, &t)| score_samples(s, t)).collect::<Result<_>>()?;
    let area = areas.samples.iter().zip(&d.areal_truth).map(|(s, &t)| score_samples(s, t)).collect::<Result<_>>()?;
    let curve = if with_curve {
        let c = implied_covariance(&fitted, &model, &cfg.covfn_distances, cfg.covfn_hypers, false)?;
        Some((
            c.correlation.iter().map(|b| b.median).collect(),
            c.correlation.iter().map(|b| b.q10).collect(),
            c.correlation.iter().map(|b| b.q90).collect(),
        ))
    } else {
        None
    };
    Ok(ModelScores { point, area, curve })
}

fn run_gp(cfg: &StudyConfig, d: &Design, rep: u64, with_curve: bool) -> Result<ModelScores> {
    let seed: u64 = replicate_rng(cfg.seed, rep, purpose::BASELINE).random();
    let gf = fit_matern_gp(&d.obs, &d.obs_y, &cfg.domain, &cfg.priors, &cfg.fit, seed)?;
    let (pm, pv) = gf.gp.predict(&d.grid, true);
    let (am, av) = gf.gp.predict_areas(&d.grid, &d.areas, true)?;
    let score = |m: &[f64], v: &[f64], t: &[f64]| -> Result<Vec<TargetScore>> {
        m.iter().zip(v).zip(t).map(|((&m, &v), &t)| score_gaussian(m, v.sqrt().max(1e-12), t)).collect()
    };
    let curve = with_curve.then(|| {
        let c: Vec<f64> = cfg.covfn_distances.iter().map(|&x| matern1_corr(x, gf.gp.hyper.rho)).collect();
        (c.clone(), c.clone(), c)
    });
    Ok(ModelScores { point: score(&pm, &pv, &d.grid_y)?, area: score(&am, &av, &d.areal_truth)?, curve })
}

fn subset<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn run_replicate(cfg: &StudyConfig, prep: &Prepared, edges: &[f64], rep: usize) -> Result<ReplicateOutput> {
    let d = design_3x3(cfg, rep as u64)?;
    let in_centre: Vec<usize> = d.areas[CENTRAL_CELL].cells.clone();
    let outer: Vec<usize> = (0..d.grid.len()).filter(|i| !in_centre.contains(i)).collect();
    let outer_areas: Vec<usize> = (0..d.areas.len()).filter(|&k| k != CENTRAL_CELL).collect();
    let distances = nearest_distances(&d.grid, &d.obs)?;
    let with_curve = rep < cfg.covfn_replicates;
    let truth_curve: Vec<f64> = cfg.covfn_distances.iter().map(|&x| cfg.cov.corr(x)).collect();

    let mut out = ReplicateOutput { replicate: rep, scores: vec![], bins: vec![], curves: vec![], curve_errors: vec![] };
    for (mi, m) in cfg.models.iter().enumerate() {
        let s = match m {
            StudyModel::Elk { scheme, layers, .. } => {
                run_elk(cfg, &d, *scheme, layers, prep.splines[mi].as_deref().unwrap_or_default(), rep as u64, with_curve)?
            }
            StudyModel::MaternGp { .. } => run_gp(cfg, &d, rep as u64, with_curve)?,
        };
        let name = m.name().to_string();
        let blocks: [(Block, ScoreReport); 6] = [
            (Block::Pointwise, report(&s.point, &d.grid_y, None)?),
            (Block::Areal, report(&s.area, &d.areal_truth, None)?),
            (Block::CentralPointwise, report(&subset(&s.point, &in_centre), &subset(&d.grid_y, &in_centre), None)?),
            (Block::CentralAreal, report(&s.area[CENTRAL_CELL..=CENTRAL_CELL], &d.areal_truth[CENTRAL_CELL..=CENTRAL_CELL], None)?),
            (Block::OuterPointwise, report(&subset(&s.point, &outer), &subset(&d.grid_y, &outer), None)?),
            (Block::OuterAreal, report(&subset(&s.area, &outer_areas), &subset(&d.areal_truth, &outer_areas), None)?),
        ];
        for (block, r) in blocks {
            out.scores.push(ScoreRow { replicate: rep, model: name.clone(), block, n: r.n, rmse: r.rmse, crps: r.crps, coverage: r.coverage, width: r.width });
        }
        let mut members = vec![Vec::new(); edges.len()];
        for (i, &dist) in distances.iter().enumerate() {
            members[bin_index(edges, dist)].push(i);
        }
        for (k, idx) in members.iter().enumerate() {
            let r = (!idx.is_empty()).then(|| report(&subset(&s.point, idx), &subset(&d.grid_y, idx), None)).transpose()?;
            out.bins.push(BinRow {
                replicate: rep,
                model: name.clone(),
                bin: k,
                n: idx.len(),
                rmse: r.as_ref().map(|r| r.rmse),
                crps: r.as_ref().map(|r| r.crps),
                coverage: r.as_ref().map(|r| r.coverage),
            });
        }
        if let Some((median, q10, q90)) = s.curve {
            for (i, &x) in cfg.covfn_distances.iter().enumerate() {
                out.curves.push(CurveRow { replicate: rep, model: name.clone(), distance: x, truth: truth_curve[i], median: median[i], q10: q10[i], q90: q90[i] });
            }
            out.curve_errors.push(CurveError { replicate: rep, model: name, iae: integrated_abs_error(&cfg.covfn_distances, &median, &truth_curve) });
        }
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// RMSE over all targets pooled across replicates, from per-replicate `(n, rmse)`.
fn pooled_rmse(v: impl Iterator<Item = (usize, f64)>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), (k, r)| (s + k as f64 * r * r, n + k));
    (n > 0).then(|| (s / n as f64).sqrt())
}

/// Per-replicate scores combined across replicates, in model then block order: RMSE is pooled
/// over all targets, the other scores are averaged.
pub fn summarize_scores(models: &[String], reps: &[ReplicateOutput]) -> Vec<SummaryRow> {
    let mut out = vec![];
    for m in models {
        for b in Block::ALL {
            let rows: Vec<&ScoreRow> = reps.iter().flat_map(|r| &r.scores).filter(|s| &s.model == m && s.block == b).collect();
            if rows.is_empty() {
                continue;
            }
            out.push(SummaryRow {
                model: m.clone(),
                block: b,
                replicates: rows.len(),
                rmse: pooled_rmse(rows.iter().map(|r| (r.n, r.rmse))).unwrap_or(f64::NAN),
                crps: mean(rows.iter().map(|r| r.crps)).unwrap_or(f64::NAN),
                coverage: mean(rows.iter().map(|r| r.coverage)).unwrap_or(f64::NAN),
                width: mean(rows.iter().map(|r| r.width)).unwrap_or(f64::NAN),
            });
        }
    }
    out
}

/// Per-bin averages over the replicates in which the bin is non-empty.
pub fn summarize_bins(models: &[String], edges: &[f64], reps: &[ReplicateOutput]) -> Vec<BinSummaryRow> {
    let mut out = vec![];
    for m in models {
        for k in 0..edges.len() {
            let rows: Vec<&BinRow> = reps.iter().flat_map(|r| &r.bins).filter(|b| &b.model == m && b.bin == k && b.n > 0).collect();
            out.push(BinSummaryRow {
                model: m.clone(),
                bin: k,
                lower: edges[k],
                upper: edges.get(k + 1).copied(),
                n: rows.iter().map(|r| r.n).sum(),
                replicates: rows.len(),
                rmse: pooled_rmse(rows.iter().filter_map(|r| r.rmse.map(|v| (r.n, v)))),
                crps: mean(rows.iter().filter_map(|r| r.crps)),
                coverage: mean(rows.iter().filter_map(|r| r.coverage)),
            });
        }
    }
    out
}

/// Runs every replicate (in parallel), excluding failed ones, and aggregates.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let edges = match &cfg.bin_edges {
        Some(e) => e.clone(),
        None => default_bin_edges(cfg)?,
    };
    let prep = prepare(cfg)?;
    let results: Vec<Result<ReplicateOutput>> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, &prep, &edges, r)).collect();
    let mut replicates = vec![];
    let mut failed = vec![];
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => replicates.push(o),
            Err(e) => {
                warn!("replicate {r} failed and is excluded: {e}");
                failed.push(FailedReplicate { replicate: r, code: e.code().into(), message: e.to_string() });
            }
        }
    }
    if failed.len() * 10 > cfg.replicates {
        return Err(ElkError::Study(format!("{} of {} replicates failed; first: {}", failed.len(), cfg.replicates, failed[0].message)));
    }
    let names: Vec<String> = cfg.models.iter().map(|m| m.name().to_string()).collect();
    Ok(StudyOutput {
        config: cfg.clone(),
        summary: summarize_scores(&names, &replicates),
        bin_summary: summarize_bins(&names, &edges, &replicates),
        bin_edges: edges,
        replicates,
        failed,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const OUTPUT_FILES: [&str; 6] =
    ["study_summary.csv", "study_replicates.csv", "study_bins.csv", "implied_corr.csv", "study_corr_error.csv", "manifest.json"];

/// Writes the study tables and manifest into `dir`.
pub fn write_outputs(out: &StudyOutput, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let path = |f: &str| dir.join(f);
    let mut w = csv::Writer::from_path(path("study_summary.csv"))?;
    w.write_record(["model", "block", "replicates", "rmse", "crps", "coverage", "width"])?;
    for r in &out.summary {
        w.write_record([r.model.clone(), r.block.as_str().into(), r.replicates.to_string(), r.rmse.to_string(), r.crps.to_string(), r.coverage.to_string(), r.width.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("study_replicates.csv"))?;
    w.write_record(["replicate", "model", "block", "n", "rmse", "crps", "coverage", "width"])?;
    for s in out.replicates.iter().flat_map(|r| &r.scores) {
        w.write_record([s.replicate.to_string(), s.model.clone(), s.block.as_str().into(), s.n.to_string(), s.rmse.to_string(), s.crps.to_string(), s.coverage.to_string(), s.width.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("study_bins.csv"))?;
    w.write_record(["model", "bin", "lower", "upper", "n", "replicates", "rmse", "crps", "coverage"])?;
    for b in &out.bin_summary {
        w.write_record([b.model.clone(), b.bin.to_string(), b.lower.to_string(), opt(b.upper), b.n.to_string(), b.replicates.to_string(), opt(b.rmse), opt(b.crps), opt(b.coverage)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("implied_corr.csv"))?;
    w.write_record(["replicate", "model", "distance", "truth", "median", "q10", "q90"])?;
    for c in out.replicates.iter().flat_map(|r| &r.curves) {
        w.write_record([c.replicate.to_string(), c.model.clone(), c.distance.to_string(), c.truth.to_string(), c.median.to_string(), c.q10.to_string(), c.q90.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path("study_corr_error.csv"))?;
    w.write_record(["replicate", "model", "iae"])?;
    for e in out.replicates.iter().flat_map(|r| &r.curve_errors) {
        w.write_record([e.replicate.to_string(), e.model.clone(), e.iae.to_string()])?;
    }
    w.flush()?;

    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": crate::io::hash_json(&out.config)?,
        "seed": out.config.seed,
        "config": out.config,
        "bin_edges": out.bin_edges,
        "replicate_streams": "stream (replicate << 8) | purpose; purposes design=1 field=2 nugget=3 fit=4 predict=5 covfn=6 baseline=7",
        "succeeded": out.replicates.iter().map(|r| r.replicate).collect::<Vec<_>>(),
        "failed": out.failed,
        "files": OUTPUT_FILES,
    });
    fs::write(path("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(OUTPUT_FILES.iter().map(|f| path(f)).collect())
}
