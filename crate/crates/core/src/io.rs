//! Dataset ingestion, configuration files and result export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, ElkError, Result};
use crate::geometry::{Domain, LayerSpec, Point};
use crate::inference::predict::{CovarianceCurve, Summary};
use crate::inference::{Area, FitSettings, PredictSettings, PredictionSet};
use crate::model::{Dataset, PriorSpec, Response};
use crate::precision::{Scheme, DEFAULT_SPLINE_KNOTS};
use crate::scoring::ScoreReport;
use crate::special::CovModel;
use crate::study::StudyConfig;

/// Hex SHA-256 of the compact JSON serialization of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub scheme: Scheme,
    pub likelihood: Schema,
    pub layers: LayerSpec,
    /// Bounding box of the data locations if absent.
    pub domain: Option<Domain>,
    pub spline_knots: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scheme: Scheme::ElkT,
            likelihood: Schema::Gaussian,
            layers: LayerSpec::knots(&[14, 40]),
            domain: None,
            spline_knots: DEFAULT_SPLINE_KNOTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovfnConfig {
    /// `n_points` evenly spaced from 0 to half the domain width if absent.
    pub distances: Option<Vec<f64>>,
    pub n_points: usize,
    pub n_hyper: usize,
    pub use_mode: bool,
}

impl Default for CovfnConfig {
    fn default() -> Self {
        CovfnConfig { distances: None, n_points: 21, n_hyper: 100, use_mode: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub domain: Domain,
    pub n_obs: usize,
    pub nugget_sd: f64,
    pub cov: CovModel,
    pub likelihood: Schema,
    /// Trials per location for binomial data.
    pub trials: u64,
    /// Constant added to the field before the logit link (binomial) or as the mean (gaussian).
    pub intercept: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            domain: Domain { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0 },
            n_obs: 400,
            nugget_sd: 0.1,
            cov: CovModel::two_scale_mixture(),
            likelihood: Schema::Gaussian,
            trials: 20,
            intercept: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub bin_edges: Option<Vec<f64>>,
    pub n_bins: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { bin_edges: None, n_bins: 8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub data: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub areas: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub priors: PriorSpec,
    pub fit: FitSettings,
    pub predict: PredictSettings,
    pub covfn: CovfnConfig,
    pub simulate: SimulateConfig,
    pub score: ScoreConfig,
    pub study: StudyConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            model: ModelConfig::default(),
            priors: PriorSpec::default(),
            fit: FitSettings::default(),
            predict: PredictSettings::default(),
            covfn: CovfnConfig::default(),
            simulate: SimulateConfig::default(),
            score: ScoreConfig::default(),
            study: StudyConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    Ok(rdr)
}

fn column_map(headers: &csv::StringRecord) -> BTreeMap<String, usize> {
    headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect()
}

fn require(cols: &BTreeMap<String, usize>, name: &str) -> Result<usize> {
    cols.get(name).copied().ok_or_else(|| ElkError::Parse(format!("missing column `{name}`")))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<T> {
    let s = rec.get(idx).ok_or_else(|| ElkError::MalformedRow { row, message: format!("missing `{name}`") })?;
    s.parse().map_err(|_| ElkError::MalformedRow { row, message: format!("cannot parse `{name}` from {s:?}") })
}

/// Reads `x,y,value` (gaussian) or `x,y,successes,trials[,urban][,cluster_id]` (binomial).
/// Row numbers in errors count data rows from 1.
pub fn read_dataset(path: &Path, schema: Schema) -> Result<Dataset> {
    let mut rdr = open_csv(path)?;
    let cols = column_map(rdr.headers()?);
    let (xi, yi) = (require(&cols, "x")?, require(&cols, "y")?);
    let mut locs = vec![];
    match schema {
        Schema::Gaussian => {
            let vi = require(&cols, "value")?;
            let mut values = vec![];
            for (k, rec) in rdr.records().enumerate() {
                let (rec, row) = (rec?, k + 1);
                locs.push([field(&rec, xi, row, "x")?, field(&rec, yi, row, "y")?]);
                values.push(field(&rec, vi, row, "value")?);
            }
            Dataset::gaussian(locs, values)
        }
        Schema::Binomial => {
            let (si, ti) = (require(&cols, "successes")?, require(&cols, "trials")?);
            let ui = cols.get("urban").copied();
            let ci = cols.get("cluster_id").copied();
            let (mut succ, mut trials, mut urban, mut clusters) = (vec![], vec![], vec![], vec![]);
            for (k, rec) in rdr.records().enumerate() {
                let (rec, row) = (rec?, k + 1);
                locs.push([field(&rec, xi, row, "x")?, field(&rec, yi, row, "y")?]);
                succ.push(field(&rec, si, row, "successes")?);
                trials.push(field(&rec, ti, row, "trials")?);
                if let Some(u) = ui {
                    let v: u8 = field(&rec, u, row, "urban")?;
                    if v > 1 {
                        return Err(ElkError::MalformedRow { row, message: "urban must be 0 or 1".into() });
                    }
                    urban.push(v as f64);
                }
                if let Some(c) = ci {
                    clusters.push(field(&rec, c, row, "cluster_id")?);
                }
            }
            Dataset::binomial(locs, succ, trials, ui.map(|_| urban), ci.map(|_| clusters))
        }
    }
}

/// Writes a dataset in the schema `read_dataset` accepts.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let urban = data.covariate_names.iter().position(|n| n == "urban");
    match &data.response {
        Response::Gaussian { values } => {
            w.write_record(["x", "y", "value"])?;
            for (p, v) in data.locations.iter().zip(values) {
                w.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])?;
            }
        }
        Response::Binomial { successes, trials } => {
            let mut header = vec!["x", "y", "successes", "trials"];
            if urban.is_some() {
                header.push("urban");
            }
            if data.cluster_ids.is_some() {
                header.push("cluster_id");
            }
            w.write_record(&header)?;
            for i in 0..data.n() {
                let p = data.locations[i];
                let mut rec = vec![p[0].to_string(), p[1].to_string(), successes[i].to_string(), trials[i].to_string()];
                if let Some(u) = urban {
                    rec.push((data.covariates[i][u] as u8).to_string());
                }
                if let Some(c) = &data.cluster_ids {
                    rec.push(c[i].to_string());
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Prediction targets: `x,y` with an optional `id` column and covariate columns by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub ids: Vec<String>,
    pub locations: Vec<Point>,
    pub covariates: BTreeMap<String, Vec<f64>>,
}

impl Targets {
    /// Covariate rows in the order of `names`; the intercept is implicit.
    pub fn design(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let n = self.locations.len();
        let mut rows = vec![Vec::with_capacity(names.len()); n];
        for name in names {
            let col: Vec<f64> = if name == crate::model::INTERCEPT {
                vec![1.0; n]
            } else {
                self.covariates.get(name).cloned().ok_or_else(|| ElkError::Parse(format!("targets lack covariate column `{name}`")))?
            };
            for (r, v) in rows.iter_mut().zip(col) {
                r.push(v);
            }
        }
        Ok(rows)
    }
}

pub fn read_targets(path: &Path) -> Result<Targets> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let cols = column_map(&headers);
    let (xi, yi) = (require(&cols, "x")?, require(&cols, "y")?);
    let idi = cols.get("id").copied();
    let extra: Vec<(String, usize)> =
        headers.iter().enumerate().filter(|(_, h)| !["x", "y", "id"].contains(h)).map(|(i, h)| (h.to_string(), i)).collect();
    let mut t = Targets { ids: vec![], locations: vec![], covariates: extra.iter().map(|(h, _)| (h.clone(), vec![])).collect() };
    for (k, rec) in rdr.records().enumerate() {
        let (rec, row) = (rec?, k + 1);
        t.locations.push([field(&rec, xi, row, "x")?, field(&rec, yi, row, "y")?]);
        t.ids.push(match idi {
            Some(i) => rec.get(i).unwrap_or_default().to_string(),
            None => k.to_string(),
        });
        for (h, i) in &extra {
            let v = field(&rec, *i, row, h)?;
            t.covariates.get_mut(h).expect("column registered").push(v);
        }
    }
    if t.locations.is_empty() {
        return Err(invalid!("no targets in {}", path.display()));
    }
    Ok(t)
}

/// Areas as `area,x,y[,weight]` rows: one row per grid point, grouped by area id in first-seen order.
pub fn read_areas(path: &Path) -> Result<(Vec<Point>, Vec<Area>)> {
    let mut rdr = open_csv(path)?;
    let cols = column_map(rdr.headers()?);
    let (ai, xi, yi) = (require(&cols, "area")?, require(&cols, "x")?, require(&cols, "y")?);
    let wi = cols.get("weight").copied();
    let mut points = vec![];
    let mut areas: Vec<Area> = vec![];
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let (rec, row) = (rec?, k + 1);
        let id = rec.get(ai).unwrap_or_default().to_string();
        points.push([field(&rec, xi, row, "x")?, field(&rec, yi, row, "y")?]);
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            areas.push(Area { id: id.clone(), cells: vec![], weights: wi.map(|_| vec![]) });
            areas.len() - 1
        });
        areas[slot].cells.push(k);
        if let Some(w) = wi {
            let v = field(&rec, w, row, "weight")?;
            areas[slot].weights.as_mut().expect("weights registered").push(v);
        }
    }
    if areas.is_empty() {
        return Err(invalid!("no areas in {}", path.display()));
    }
    Ok((points, areas))
}

pub const PREDICTION_COLUMNS: [&str; 6] = ["target", "mean", "sd", "q10", "q50", "q90"];

pub fn write_predictions(path: &Path, set: &PredictionSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTION_COLUMNS)?;
    for (id, s) in set.targets.iter().zip(&set.summaries) {
        w.write_record([id.clone(), s.mean.to_string(), s.sd.to_string(), s.q10.to_string(), s.q50.to_string(), s.q90.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, Summary)>> {
    let mut rdr = open_csv(path)?;
    let cols = column_map(rdr.headers()?);
    let idx: Vec<usize> = PREDICTION_COLUMNS.iter().map(|c| require(&cols, c)).collect::<Result<_>>()?;
    let mut out = vec![];
    for (k, rec) in rdr.records().enumerate() {
        let (rec, row) = (rec?, k + 1);
        let id = rec.get(idx[0]).unwrap_or_default().to_string();
        let s = Summary {
            mean: field(&rec, idx[1], row, "mean")?,
            sd: field(&rec, idx[2], row, "sd")?,
            q10: field(&rec, idx[3], row, "q10")?,
            q50: field(&rec, idx[4], row, "q50")?,
            q90: field(&rec, idx[5], row, "q90")?,
        };
        out.push((id, s));
    }
    Ok(out)
}

/// Truth values as `target,value`.
pub fn read_truth(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = open_csv(path)?;
    let cols = column_map(rdr.headers()?);
    let (ti, vi) = (require(&cols, "target")?, require(&cols, "value")?);
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let (rec, row) = (rec?, k + 1);
        let id = rec.get(ti).unwrap_or_default().to_string();
        if out.insert(id.clone(), field(&rec, vi, row, "value")?).is_some() {
            return Err(ElkError::MalformedRow { row, message: format!("duplicate target {id:?}") });
        }
    }
    Ok(out)
}

pub fn write_score(path: &Path, r: &ScoreReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scope", "lower", "upper", "n", "rmse", "crps", "coverage", "width"])?;
    w.write_record(["overall".into(), String::new(), String::new(), r.n.to_string(), r.rmse.to_string(), r.crps.to_string(), r.coverage.to_string(), r.width.to_string()])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (k, b) in r.bins.iter().enumerate() {
        w.write_record([format!("bin{k}"), b.lower.to_string(), opt(b.upper), b.n.to_string(), opt(b.rmse), opt(b.crps), opt(b.coverage), String::new()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covfn(path: &Path, c: &CovarianceCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["distance", "cov_median", "cov_q10", "cov_q90", "corr_median", "corr_q10", "corr_q90"])?;
    for ((d, cv), cr) in c.distances.iter().zip(&c.covariance).zip(&c.correlation) {
        w.write_record([
            d.to_string(),
            cv.median.to_string(),
            cv.q10.to_string(),
            cv.q90.to_string(),
            cr.median.to_string(),
            cr.q10.to_string(),
            cr.q90.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sibling manifest recording the materialized configuration, its hash, the seed and the outputs.
pub fn write_manifest(path: &Path, command: &str, config: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let names: Vec<String> = files.iter().map(|f| f.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())).collect();
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash_json(config)?,
        "seed": config.seed,
        "config": config,
        "files": names,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}
