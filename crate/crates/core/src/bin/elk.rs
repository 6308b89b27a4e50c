use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use elk::geometry::{Domain, Point};
use elk::inference::predict::implied_covariance;
use elk::inference::{aggregate, default_init, fit, predict_points, FitResult, PredictSettings, PredictionSet, Scale};
use elk::io::{self, RunConfig, Schema};
use elk::model::{expit, Dataset, LatentModel};
use elk::rng::stream_rng;
use elk::scoring::{bin_by_distance, crps_gaussian, equal_width_edges, nearest_distances, report, TargetScore};
use elk::study::design::simulate_grf;
use elk::study::{run_study, write_outputs, StudyConfig, OUTPUT_FILES};
use elk::{ElkError, Result};

#[derive(Parser)]
#[command(name = "elk", version, about = "Bayesian multiresolution lattice kriging")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (also the study seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset from the configured covariance model or a fitted model.
    Simulate {
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Fit a model to a dataset and write fit.json.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict at target points and/or areas.
    Predict {
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        areas: Option<PathBuf>,
    },
    /// Score predictions against truth, optionally in nearest-observation distance bins.
    Score {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Target locations (for distance bins).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Observations (for distance bins).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Model-implied covariance and correlation curves with 80% bands.
    Covfn {
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Run the simulation study.
    Study {
        #[arg(long)]
        full_scale: bool,
    },
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone()).ok_or_else(|| ElkError::InvalidArgument(format!("no {what} path given (flag or [io] section)")))
}

/// Files written so far, removed again if the command fails.
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn file(&mut self, dir: &Path, name: &str) -> PathBuf {
        let p = dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn remove_all(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.study.seed = s;
    }
    Ok(cfg)
}

fn read_fit(path: &Path) -> Result<(FitResult, LatentModel)> {
    let fit = FitResult::from_json(&fs::read_to_string(path)?)?;
    let model = fit.latent_model()?;
    Ok((fit, model))
}

fn uniform_points(domain: &Domain, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = stream_rng(seed, 1);
    (0..n)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            [domain.x_min + u * domain.width(), domain.y_min + v * domain.height()]
        })
        .collect()
}

fn binomial_draws(p: &[f64], trials: u64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = stream_rng(seed, 4);
    p.iter()
        .map(|&pi| Ok(Binomial::new(trials, pi).map_err(|e| ElkError::InvalidArgument(e.to_string()))?.sample(&mut rng)))
        .collect()
}

fn simulate(cfg: &RunConfig, fit_path: Option<PathBuf>, outs: &mut Outputs, dir: &Path) -> Result<()> {
    let s = &cfg.simulate;
    if s.n_obs == 0 {
        return Err(ElkError::InvalidArgument("simulate.n_obs must be positive".into()));
    }
    let data = if let Some(fp) = fit_path.or_else(|| cfg.io.fit.clone()) {
        let (fit, model) = read_fit(&fp)?;
        let locs = uniform_points(&model.basis.domain, s.n_obs, cfg.seed);
        let p = model.n_fixed();
        let covs: Vec<Vec<f64>> = (0..s.n_obs).map(|_| (0..p).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect()).collect();
        let binomial = s.likelihood == Schema::Binomial;
        let settings = PredictSettings {
            n_hyper: 1,
            draws_per_hyper: 1,
            scale: if binomial { Scale::Probability } else { Scale::Response },
            include_nugget: true,
            use_mode: true,
        };
        let draw: Vec<f64> = predict_points(&fit, &model, &locs, Some(&covs), &settings, cfg.seed)?.samples.into_iter().map(|v| v[0]).collect();
        if binomial {
            Dataset::binomial(locs, binomial_draws(&draw, s.trials, cfg.seed)?, vec![s.trials; s.n_obs], None, None)?
        } else {
            Dataset::gaussian(locs, draw)?
        }
    } else {
        let locs = uniform_points(&s.domain, s.n_obs, cfg.seed);
        let u = simulate_grf(&locs, &s.cov, &mut stream_rng(cfg.seed, 2))?;
        let mut rng = stream_rng(cfg.seed, 3);
        let eta: Vec<f64> = u.iter().map(|v| s.intercept + v + s.nugget_sd * rng.sample::<f64, _>(StandardNormal)).collect();
        match s.likelihood {
            Schema::Gaussian => Dataset::gaussian(locs, eta)?,
            Schema::Binomial => {
                let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
                Dataset::binomial(locs, binomial_draws(&p, s.trials, cfg.seed)?, vec![s.trials; s.n_obs], None, None)?
            }
        }
    };
    io::write_dataset(&outs.file(dir, "data.csv"), &data)
}

fn run_fit(cfg: &RunConfig, data: Option<PathBuf>, outs: &mut Outputs, dir: &Path) -> Result<()> {
    let data = io::read_dataset(&pick(data, &cfg.io.data, "dataset")?, cfg.model.likelihood)?;
    let domain = match cfg.model.domain {
        Some(d) => d,
        None => Domain::bounding(&data.locations)?,
    };
    let basis = cfg.model.layers.build(domain)?;
    let model = LatentModel::new(data, basis, cfg.model.scheme, cfg.priors.clone(), None, cfg.model.spline_knots)?;
    let result = fit(&model, &default_init(&model), &cfg.fit, cfg.seed)?;
    fs::write(outs.file(dir, "fit.json"), result.to_json()? + "\n")?;
    Ok(())
}

fn run_predict(cfg: &RunConfig, fit_path: Option<PathBuf>, targets: Option<PathBuf>, areas: Option<PathBuf>, outs: &mut Outputs, dir: &Path) -> Result<()> {
    let (fit, model) = read_fit(&pick(fit_path, &cfg.io.fit, "fit")?)?;
    let targets = targets.or_else(|| cfg.io.targets.clone());
    let areas = areas.or_else(|| cfg.io.areas.clone());
    if targets.is_none() && areas.is_none() {
        return Err(ElkError::InvalidArgument("predict needs --targets and/or --areas".into()));
    }
    if let Some(tp) = targets {
        let t = io::read_targets(&tp)?;
        let design = if model.n_fixed() > 1 { Some(t.design(&model.dataset.covariate_names)?) } else { None };
        let mut set = predict_points(&fit, &model, &t.locations, design.as_deref(), &cfg.predict, cfg.seed)?;
        set.targets = t.ids;
        io::write_predictions(&outs.file(dir, "predictions.csv"), &set)?;
    }
    if let Some(ap) = areas {
        let (points, areas) = io::read_areas(&ap)?;
        let grid: PredictionSet = predict_points(&fit, &model, &points, None, &cfg.predict, cfg.seed)?;
        io::write_predictions(&outs.file(dir, "area_predictions.csv"), &aggregate(&grid, &areas)?)?;
    }
    Ok(())
}

fn run_score(
    cfg: &RunConfig,
    predictions: Option<PathBuf>,
    truth: Option<PathBuf>,
    targets: Option<PathBuf>,
    data: Option<PathBuf>,
    outs: &mut Outputs,
    dir: &Path,
) -> Result<()> {
    let preds = io::read_predictions(&pick(predictions, &cfg.io.predictions, "predictions")?)?;
    let truth_map = io::read_truth(&pick(truth, &cfg.io.truth, "truth")?)?;
    let mut scores = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for (id, s) in &preds {
        let y = *truth_map.get(id).ok_or_else(|| ElkError::InvalidArgument(format!("no truth for target {id:?}")))?;
        let crps = if s.sd > 0.0 { crps_gaussian(s.mean, s.sd, y)? } else { (s.mean - y).abs() };
        scores.push(TargetScore { mean: s.mean, crps, covered: ((s.q10..=s.q90).contains(&y)) as u8 as f64, width: s.q90 - s.q10 });
        truth.push(y);
    }
    let bins = match (targets.or_else(|| cfg.io.targets.clone()), data.or_else(|| cfg.io.data.clone())) {
        (Some(tp), Some(dp)) => {
            let t = io::read_targets(&tp)?;
            let obs = io::read_dataset(&dp, cfg.model.likelihood)?.locations;
            let by_id: std::collections::BTreeMap<&str, Point> = t.ids.iter().map(String::as_str).zip(t.locations.iter().copied()).collect();
            let locs: Vec<Point> = preds
                .iter()
                .map(|(id, _)| by_id.get(id.as_str()).copied().ok_or_else(|| ElkError::InvalidArgument(format!("no location for target {id:?}"))))
                .collect::<Result<_>>()?;
            let edges = match &cfg.score.bin_edges {
                Some(e) => e.clone(),
                None => equal_width_edges(&nearest_distances(&locs, &obs)?, cfg.score.n_bins)?,
            };
            Some(bin_by_distance(&locs, &obs, &edges)?)
        }
        _ => None,
    };
    let r = report(&scores, &truth, bins.as_ref())?;
    io::write_score(&outs.file(dir, "score.csv"), &r)
}

fn run_covfn(cfg: &RunConfig, fit_path: Option<PathBuf>, outs: &mut Outputs, dir: &Path) -> Result<()> {
    let (fit, model) = read_fit(&pick(fit_path, &cfg.io.fit, "fit")?)?;
    let distances = match &cfg.covfn.distances {
        Some(d) => d.clone(),
        None => {
            let reach = model.basis.domain.x_max - model.basis.domain.center()[0];
            let k = cfg.covfn.n_points.max(2) - 1;
            (0..=k).map(|i| if i == k { reach } else { reach * i as f64 / k as f64 }).collect()
        }
    };
    let n_hyper = cfg.covfn.n_hyper.min(fit.hyper_samples.len());
    let curve = implied_covariance(&fit, &model, &distances, n_hyper, cfg.covfn.use_mode)?;
    io::write_covfn(&outs.file(dir, "covfn.csv"), &curve)
}

fn run(cli: Cli, outs: &mut Outputs) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| ElkError::InvalidArgument(e.to_string()))?;
    }
    let dir = cli.out.clone();
    fs::create_dir_all(&dir)?;
    let name = match cli.command {
        Command::Simulate { fit } => {
            simulate(&cfg, fit, outs, &dir)?;
            "simulate"
        }
        Command::Fit { data } => {
            run_fit(&cfg, data, outs, &dir)?;
            "fit"
        }
        Command::Predict { fit, targets, areas } => {
            run_predict(&cfg, fit, targets, areas, outs, &dir)?;
            "predict"
        }
        Command::Score { predictions, truth, targets, data } => {
            run_score(&cfg, predictions, truth, targets, data, outs, &dir)?;
            "score"
        }
        Command::Covfn { fit } => {
            run_covfn(&cfg, fit, outs, &dir)?;
            "covfn"
        }
        Command::Study { full_scale } => {
            if full_scale {
                cfg.study = StudyConfig { seed: cfg.study.seed, ..StudyConfig::full_scale() };
            }
            outs.written.extend(OUTPUT_FILES.iter().map(|f| dir.join(f)));
            let out = run_study(&cfg.study)?;
            write_outputs(&out, &dir)?;
            return Ok(());
        }
    };
    let files = outs.written.clone();
    io::write_manifest(&outs.file(&dir, &format!("{name}.manifest.json")), name, &cfg, &files)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "code": "E_USAGE", "message": first }));
            return ExitCode::FAILURE;
        }
    };
    let mut outs = Outputs { written: vec![] };
    match run(cli, &mut outs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outs.remove_all();
            eprintln!("{}", serde_json::json!({ "code": e.code(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
