//! Latent Gaussian model: data, priors, hyperparameter transforms and the
//! conditional latent posterior (exact for Gaussian data, Laplace for binomial).

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cholesky::{CholFactor, SymbolicCholesky};
use crate::error::{invalid, ElkError, Result};
use crate::geometry::{MultiresBasis, Point};
use crate::precision::{build_norm_splines, joint_log_det, HyperParams, NormalizationSpline, PrecisionAssembler, Scheme};
use crate::sparse::SparseMatrix;

pub const INTERCEPT: &str = "intercept";
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 10;
pub const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Gaussian { values: Vec<f64> },
    Binomial { successes: Vec<u64>, trials: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian,
    BinomialLogit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub locations: Vec<Point>,
    pub response: Response,
    pub covariate_names: Vec<String>,
    /// Row-major `n × p` design, first column the intercept.
    pub covariates: Vec<Vec<f64>>,
    #[serde(default)]
    pub cluster_ids: Option<Vec<u64>>,
    #[serde(default)]
    pub area_ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn gaussian(locations: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        let n = locations.len();
        let d = Dataset {
            locations,
            response: Response::Gaussian { values },
            covariate_names: vec![INTERCEPT.into()],
            covariates: vec![vec![1.0]; n],
            cluster_ids: None,
            area_ids: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// Binomial counts; an `urban` indicator becomes a second fixed effect.
    pub fn binomial(
        locations: Vec<Point>,
        successes: Vec<u64>,
        trials: Vec<u64>,
        urban: Option<Vec<f64>>,
        cluster_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        let n = locations.len();
        let mut names = vec![INTERCEPT.to_string()];
        let mut covariates = vec![vec![1.0]; n];
        if let Some(u) = urban {
            if u.len() != n {
                return Err(ElkError::DimensionMismatch("urban indicator length".into()));
            }
            names.push("urban".into());
            for (row, v) in covariates.iter_mut().zip(u) {
                row.push(v);
            }
        }
        let d = Dataset {
            locations,
            response: Response::Binomial { successes, trials },
            covariate_names: names,
            covariates,
            cluster_ids,
            area_ids: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn likelihood(&self) -> Likelihood {
        match self.response {
            Response::Gaussian { .. } => Likelihood::Gaussian,
            Response::Binomial { .. } => Likelihood::BinomialLogit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(invalid!("dataset has no observations"));
        }
        for (i, p) in self.locations.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(ElkError::MalformedRow { row: i + 1, message: "non-finite location".into() });
            }
        }
        match &self.response {
            Response::Gaussian { values } => {
                if values.len() != n {
                    return Err(ElkError::DimensionMismatch("response length".into()));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(ElkError::MalformedRow { row: i + 1, message: "non-finite value".into() });
                }
            }
            Response::Binomial { successes, trials } => {
                if successes.len() != n || trials.len() != n {
                    return Err(ElkError::DimensionMismatch("count lengths".into()));
                }
                for (i, (&y, &t)) in successes.iter().zip(trials).enumerate() {
                    if t == 0 {
                        return Err(ElkError::MalformedRow { row: i + 1, message: "trials must be at least 1".into() });
                    }
                    if y > t {
                        return Err(ElkError::MalformedRow { row: i + 1, message: format!("successes {y} exceed trials {t}") });
                    }
                }
            }
        }
        let p = self.p();
        if p == 0 || self.covariates.len() != n || self.covariates.iter().any(|r| r.len() != p) {
            return Err(ElkError::DimensionMismatch("covariate design must be n × p with p ≥ 1".into()));
        }
        if self.covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid!("covariates must be finite"));
        }
        if self.cluster_ids.as_ref().is_some_and(|c| c.len() != n) {
            return Err(ElkError::DimensionMismatch("cluster id length".into()));
        }
        if self.area_ids.as_ref().is_some_and(|c| c.len() != n) {
            return Err(ElkError::DimensionMismatch("area id length".into()));
        }
        Ok(())
    }
}

/// Exponential prior on a standard deviation with `P(σ > u) = alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcSdPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcSdPrior {
    pub fn rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    pub fn log_density(&self, sigma: f64) -> f64 {
        let lambda = self.rate();
        lambda.ln() - lambda * sigma
    }

    pub fn cdf(&self, sigma: f64) -> f64 {
        1.0 - (-self.rate() * sigma).exp()
    }
}

impl Default for PcSdPrior {
    fn default() -> Self {
        PcSdPrior { u: 1.0, alpha: 0.01 }
    }
}

/// `p(ρ) = (λ/ρ²) exp(−λ/ρ)` with λ = ρ₀ ln 2, so the median is ρ₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvExpPrior {
    pub median: f64,
}

impl InvExpPrior {
    pub fn lambda(&self) -> f64 {
        self.median * LN_2
    }

    pub fn log_density(&self, rho: f64) -> f64 {
        let l = self.lambda();
        l.ln() - 2.0 * rho.ln() - l / rho
    }

    pub fn cdf(&self, rho: f64) -> f64 {
        (-self.lambda() / rho).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub sd_spatial: PcSdPrior,
    pub sd_nugget: PcSdPrior,
    /// Dirichlet concentrations are `dirichlet_total / L` per layer.
    pub dirichlet_total: f64,
    /// Median effective range of the coarsest layer; a fifth of the domain diameter if absent.
    pub range_median: Option<f64>,
    pub beta_precision: f64,
    pub intercept_precision: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            sd_spatial: PcSdPrior::default(),
            sd_nugget: PcSdPrior::default(),
            dirichlet_total: 1.5,
            range_median: None,
            beta_precision: 1e-3,
            intercept_precision: 1e-10,
        }
    }
}

impl PriorSpec {
    pub fn dirichlet(&self, n_layers: usize) -> Vec<f64> {
        vec![self.dirichlet_total / n_layers as f64; n_layers]
    }

    /// Median of each range prior, scaled with the layer cell widths.
    pub fn range_medians(&self, basis: &MultiresBasis, scheme: Scheme) -> Vec<f64> {
        let rho0 = self.range_median.unwrap_or(basis.domain.diameter() / 5.0);
        let d1 = basis.layers[0].delta;
        let k = HyperParams::n_ranges_for(scheme, basis.n_layers());
        basis.layers[..k].iter().map(|l| rho0 * l.delta / d1).collect()
    }
}

pub fn log_dirichlet(alpha: &[f64], a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    let mut v = libm::lgamma(total);
    for (&x, &ai) in alpha.iter().zip(a) {
        v += (ai - 1.0) * x.ln() - libm::lgamma(ai);
    }
    v
}

/// Log prior density of the hyperparameters on their natural scale
/// (σ_S, σ_N, α_1..α_{L−1}, ρ).
pub fn log_prior(hyper: &HyperParams, priors: &PriorSpec, basis: &MultiresBasis) -> f64 {
    let mut v = priors.sd_spatial.log_density(hyper.sigma2_s.sqrt()) + priors.sd_nugget.log_density(hyper.sigma2_n.sqrt());
    if hyper.alpha.len() > 1 {
        v += log_dirichlet(&hyper.alpha, &priors.dirichlet(hyper.alpha.len()));
    }
    for (&r, &med) in hyper.rho.iter().zip(&priors.range_medians(basis, hyper.scheme)) {
        v += InvExpPrior { median: med }.log_density(r);
    }
    v
}

/// Log prior density of the transformed vector, Jacobians included.
pub fn log_prior_transformed(hyper: &HyperParams, priors: &PriorSpec, basis: &MultiresBasis) -> f64 {
    let mut v = log_prior(hyper, priors, basis);
    // d σ / d log σ² = σ / 2
    v += (0.5 * hyper.sigma2_s.sqrt()).ln() + (0.5 * hyper.sigma2_n.sqrt()).ln();
    if hyper.alpha.len() > 1 {
        v += hyper.alpha.iter().map(|a| a.ln()).sum::<f64>();
    }
    v += hyper.rho.iter().map(|r| r.ln()).sum::<f64>();
    v
}

/// Unconstrained coordinates `[log σ_S², alr(α), log ρ, log σ_N²]`.
pub fn transform(hyper: &HyperParams) -> Vec<f64> {
    let mut t = vec![hyper.sigma2_s.ln()];
    let last = *hyper.alpha.last().unwrap();
    t.extend(hyper.alpha[..hyper.alpha.len() - 1].iter().map(|a| (a / last).ln()));
    t.extend(hyper.rho.iter().map(|r| r.ln()));
    t.push(hyper.sigma2_n.ln());
    t
}

pub fn n_transformed(scheme: Scheme, n_layers: usize) -> usize {
    1 + (n_layers - 1) + HyperParams::n_ranges_for(scheme, n_layers) + 1
}

pub fn untransform(theta: &[f64], scheme: Scheme, n_layers: usize) -> Result<HyperParams> {
    if theta.len() != n_transformed(scheme, n_layers) {
        return Err(ElkError::DimensionMismatch(format!("{} transformed coordinates for {n_layers} layers", theta.len())));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("transformed hyperparameters must be finite"));
    }
    let z = &theta[1..n_layers];
    let zmax = z.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut alpha: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    alpha.push((-zmax).exp());
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    let nr = HyperParams::n_ranges_for(scheme, n_layers);
    let rho = theta[n_layers..n_layers + nr].iter().map(|v| v.exp()).collect();
    let h = HyperParams { sigma2_s: theta[0].exp(), alpha, rho, sigma2_n: theta[theta.len() - 1].exp(), scheme };
    if !(h.sigma2_s > 0.0 && h.sigma2_s.is_finite() && h.sigma2_n > 0.0 && h.sigma2_n.is_finite())
        || h.rho.iter().any(|r: &f64| !(*r > 0.0 && r.is_finite()))
        || h.alpha.iter().any(|a| !(*a > 0.0))
    {
        return Err(ElkError::NonFiniteObjective("hyperparameters under/overflow".into()));
    }
    Ok(h)
}

/// Laplace or exact Gaussian approximation of the latent posterior at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mode: Vec<f64>,
    pub precision_factor: CholFactor,
    pub log_marginal: f64,
    pub iterations: usize,
}

/// Latent vector layout: `[β (p), c (total_m), ε (clusters)]`.
#[derive(Debug)]
pub struct LatentModel {
    pub dataset: Dataset,
    pub basis: MultiresBasis,
    pub scheme: Scheme,
    pub priors: PriorSpec,
    pub splines: Vec<NormalizationSpline>,
    likelihood: Likelihood,
    p: usize,
    m: usize,
    n_clusters: usize,
    /// Rows of `W = [Z A M]`.
    rows: Vec<Vec<(usize, f64)>>,
    assembler: PrecisionAssembler,
    pattern: SparseMatrix,
    c_pos: Vec<usize>,
    beta_pos: Vec<usize>,
    eps_pos: Vec<usize>,
    /// Per observation, `(slot, w_a w_b)` for every pair of nonzeros of its row.
    outer: Vec<Vec<(usize, f64)>>,
    wtw: Vec<f64>,
    wty: Vec<f64>,
    yty: f64,
    symbolic: Arc<SymbolicCholesky>,
    range_medians: Vec<f64>,
}

/// Pieces of the prior precision that depend on the hyperparameters.
#[derive(Debug, Clone)]
pub struct PriorParts {
    pub kappas: Vec<f64>,
    pub scales: Vec<f64>,
    pub log_det: f64,
    pub values: Vec<f64>,
}

impl LatentModel {
    pub fn new(
        dataset: Dataset,
        basis: MultiresBasis,
        scheme: Scheme,
        priors: PriorSpec,
        splines: Option<Vec<NormalizationSpline>>,
        spline_knots: usize,
    ) -> Result<Self> {
        dataset.validate()?;
        if scheme == Scheme::ElkF {
            for w in basis.layers.windows(2) {
                if ((w[0].delta / w[1].delta) - 2.0).abs() > 1e-9 {
                    log::warn!("ELK-F normally uses halving resolutions; got {} → {}", w[0].delta, w[1].delta);
                }
            }
        }
        let splines = match splines {
            Some(s) if s.len() == basis.n_layers() => s,
            Some(_) => return Err(invalid!("one normalization spline per layer required")),
            None => build_norm_splines(&basis, spline_knots)?,
        };
        let likelihood = dataset.likelihood();
        let (p, m) = (dataset.p(), basis.total_m());
        let (cluster_of, n_clusters) = match likelihood {
            Likelihood::Gaussian => (vec![], 0),
            Likelihood::BinomialLogit => cluster_index(&dataset),
        };
        let dim = p + m + n_clusters;
        let a = basis.basis_matrix(&dataset.locations)?;
        let at = a.transpose();
        let rows: Vec<Vec<(usize, f64)>> = (0..dataset.n())
            .map(|i| {
                let mut r: Vec<(usize, f64)> = dataset.covariates[i].iter().enumerate().map(|(k, &v)| (k, v)).collect();
                let (ri, rv) = at.col(i);
                r.extend(ri.iter().zip(rv).map(|(&j, &v)| (p + j, v)));
                if n_clusters > 0 {
                    r.push((p + m + cluster_of[i], 1.0));
                }
                r
            })
            .collect();

        let assembler = PrecisionAssembler::new(&basis);
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        trip.extend((0..p).map(|k| (k, k, 1.0)));
        trip.extend(assembler.pattern().triplets().map(|(r, c, _)| (r + p, c + p, 1.0)));
        trip.extend((0..n_clusters).map(|k| (p + m + k, p + m + k, 1.0)));
        for r in &rows {
            for &(a, _) in r {
                for &(b, _) in r {
                    trip.push((a, b, 0.0));
                }
            }
        }
        let pattern = SparseMatrix::from_triplets(dim, dim, &trip)?;
        let slot = |r: usize, c: usize| pattern.find(r, c).expect("entry in posterior pattern");
        let c_pos = assembler.pattern().triplets().map(|(r, c, _)| slot(r + p, c + p)).collect();
        let beta_pos = (0..p).map(|k| slot(k, k)).collect();
        let eps_pos = (0..n_clusters).map(|k| slot(p + m + k, p + m + k)).collect();
        let outer: Vec<Vec<(usize, f64)>> = rows
            .iter()
            .map(|r| r.iter().flat_map(|&(a, va)| r.iter().map(move |&(b, vb)| (a, b, va * vb))).map(|(a, b, v)| (slot(a, b), v)).collect())
            .collect();
        let mut wtw = vec![0.0; pattern.nnz()];
        for o in &outer {
            for &(s, v) in o {
                wtw[s] += v;
            }
        }
        let (wty, yty) = match &dataset.response {
            Response::Gaussian { values } => {
                let mut wty = vec![0.0; dim];
                for (r, &y) in rows.iter().zip(values) {
                    for &(j, v) in r {
                        wty[j] += v * y;
                    }
                }
                (wty, values.iter().map(|y| y * y).sum())
            }
            Response::Binomial { .. } => (vec![], 0.0),
        };
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern)?);
        let range_medians = priors.range_medians(&basis, scheme);
        Ok(LatentModel {
            dataset,
            basis,
            scheme,
            priors,
            splines,
            likelihood,
            p,
            m,
            n_clusters,
            rows,
            assembler,
            pattern,
            c_pos,
            beta_pos,
            eps_pos,
            outer,
            wtw,
            wty,
            yty,
            symbolic,
            range_medians,
        })
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn dim(&self) -> usize {
        self.p + self.m + self.n_clusters
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_basis(&self) -> usize {
        self.m
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_layers(&self) -> usize {
        self.basis.n_layers()
    }

    pub fn n_hyper(&self) -> usize {
        n_transformed(self.scheme, self.n_layers())
    }

    pub fn range_medians(&self) -> &[f64] {
        &self.range_medians
    }

    /// Symbolic factorization shared by every posterior precision of this model.
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn posterior_pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    pub fn untransform(&self, theta: &[f64]) -> Result<HyperParams> {
        untransform(theta, self.scheme, self.n_layers())
    }

    pub fn log_prior_transformed(&self, theta: &[f64]) -> Result<f64> {
        let h = self.untransform(theta)?;
        Ok(log_prior_transformed(&h, &self.priors, &self.basis))
    }

    fn beta_precision(&self, k: usize) -> f64 {
        if self.dataset.covariate_names[k] == INTERCEPT {
            self.priors.intercept_precision
        } else {
            self.priors.beta_precision
        }
    }

    /// Prior precision values on the posterior pattern, plus its log determinant.
    pub fn prior_parts(&self, hyper: &HyperParams) -> Result<PriorParts> {
        hyper.validate(self.n_layers())?;
        let kappas = hyper.kappas(&self.basis);
        let scales = self.assembler.layer_scales(hyper, &kappas, &self.splines);
        let mut cvals = vec![0.0; self.assembler.pattern().nnz()];
        self.assembler.fill(&kappas, &scales, &mut cvals)?;
        let mut values = vec![0.0; self.pattern.nnz()];
        for (&s, &v) in self.c_pos.iter().zip(&cvals) {
            values[s] = v;
        }
        let mut log_det = joint_log_det(&self.basis, &kappas, &scales);
        for (k, &s) in self.beta_pos.iter().enumerate() {
            let q = self.beta_precision(k);
            values[s] = q;
            log_det += q.ln();
        }
        let eps_q = 1.0 / hyper.sigma2_n;
        for &s in &self.eps_pos {
            values[s] = eps_q;
        }
        log_det += self.n_clusters as f64 * eps_q.ln();
        Ok(PriorParts { kappas, scales, log_det, values })
    }

    fn with_values(&self, values: Vec<f64>) -> SparseMatrix {
        let mut q = self.pattern.clone();
        q.values_mut().copy_from_slice(&values);
        q
    }

    /// Prior precision of the full latent vector.
    pub fn prior_precision(&self, hyper: &HyperParams) -> Result<SparseMatrix> {
        Ok(self.with_values(self.prior_parts(hyper)?.values))
    }

    /// `Q_prior + Wᵀ diag(weights) W`.
    pub fn posterior_precision(&self, prior: &[f64], weights: &[f64]) -> SparseMatrix {
        let mut v = prior.to_vec();
        for (o, &w) in self.outer.iter().zip(weights) {
            for &(s, x) in o {
                v[s] += w * x;
            }
        }
        self.with_values(v)
    }

    /// Linear predictor `η = W x` at the observations.
    pub fn eta(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    fn w_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (r, &vi) in self.rows.iter().zip(v) {
            for &(j, w) in r {
                out[j] += w * vi;
            }
        }
        out
    }

    /// Observation log likelihood and its first two η-derivatives.
    pub fn log_lik(&self, eta: &[f64], hyper: &HyperParams) -> (f64, Vec<f64>, Vec<f64>) {
        match &self.dataset.response {
            Response::Gaussian { values } => gaussian_terms(values, eta, hyper.sigma2_n),
            Response::Binomial { successes, trials } => binomial_terms(successes, trials, eta),
        }
    }

    fn log_joint(&self, x: &[f64], prior: &SparseMatrix, hyper: &HyperParams) -> Result<f64> {
        let (ll, _, _) = self.log_lik(&self.eta(x), hyper);
        let qx = prior.mul_vec(x)?;
        Ok(ll - 0.5 * dotv(x, &qx))
    }

    /// Gradient of the log joint `log p(y | x) + log p(x | θ)` in the latent vector.
    pub fn log_joint_gradient(&self, x: &[f64], hyper: &HyperParams) -> Result<Vec<f64>> {
        let prior = self.prior_precision(hyper)?;
        let (_, d1, _) = self.log_lik(&self.eta(x), hyper);
        let mut g = self.w_transpose(&d1);
        for (gi, qi) in g.iter_mut().zip(prior.mul_vec(x)?) {
            *gi -= qi;
        }
        Ok(g)
    }

    /// `[Z_t A_t 0]` rows for new targets (cluster effects left at zero).
    pub fn target_matrix(&self, locations: &[Point], covariates: Option<&[Vec<f64>]>) -> Result<SparseMatrix> {
        let n = locations.len();
        let cov: Vec<Vec<f64>> = match covariates {
            Some(c) => {
                if c.len() != n || c.iter().any(|r| r.len() != self.p) {
                    return Err(ElkError::DimensionMismatch(format!("target covariates must be {n} × {}", self.p)));
                }
                c.to_vec()
            }
            None if self.p == 1 => vec![vec![1.0]; n],
            None => return Err(invalid!("targets need covariate values for {:?}", self.dataset.covariate_names)),
        };
        let a = self.basis.basis_matrix(locations)?;
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + n * self.p);
        for (i, row) in cov.iter().enumerate() {
            trip.extend(row.iter().enumerate().map(|(k, &v)| (i, k, v)));
        }
        trip.extend(a.triplets().map(|(r, c, v)| (r, c + self.p, v)));
        SparseMatrix::from_triplets(n, self.dim(), &trip)
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cluster_index(d: &Dataset) -> (Vec<usize>, usize) {
    match &d.cluster_ids {
        None => ((0..d.n()).collect(), d.n()),
        Some(ids) => {
            let mut map = BTreeMap::new();
            for &id in ids {
                let next = map.len();
                map.entry(id).or_insert(next);
            }
            // Renumber in sorted id order so the layout does not depend on row order.
            let sorted: BTreeMap<u64, usize> = map.keys().enumerate().map(|(i, &k)| (k, i)).collect();
            (ids.iter().map(|id| sorted[id]).collect(), sorted.len())
        }
    }
}

fn gaussian_terms(y: &[f64], eta: &[f64], s2: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let c = -0.5 * (2.0 * PI * s2).ln();
    let mut ll = 0.0;
    let d1: Vec<f64> = y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            let r = yi - e;
            ll += c - 0.5 * r * r / s2;
            r / s2
        })
        .collect();
    (ll, d1, vec![-1.0 / s2; y.len()])
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Binomial-logit log likelihood with `d/dη = y − Np` and `d²/dη² = −Np(1−p)`.
pub fn binomial_terms(successes: &[u64], trials: &[u64], eta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut ll = 0.0;
    let mut d1 = Vec::with_capacity(eta.len());
    let mut d2 = Vec::with_capacity(eta.len());
    for ((&y, &n), &e) in successes.iter().zip(trials).zip(eta) {
        let (yf, nf) = (y as f64, n as f64);
        ll += log_choose(n, y) + yf * e - nf * softplus(e);
        let p = expit(e);
        d1.push(yf - nf * p);
        d2.push(-nf * p * (1.0 - p));
    }
    (ll, d1, d2)
}

/// Exact latent posterior for Gaussian responses.
pub fn gaussian_latent_posterior(model: &LatentModel, hyper: &HyperParams) -> Result<GaussianApprox> {
    if model.likelihood != Likelihood::Gaussian {
        return Err(invalid!("exact posterior requires a Gaussian likelihood"));
    }
    let parts = model.prior_parts(hyper)?;
    let s2 = hyper.sigma2_n;
    let mut v = parts.values;
    for (vi, w) in v.iter_mut().zip(&model.wtw) {
        *vi += w / s2;
    }
    let q_post = model.with_values(v);
    let factor = model.symbolic.factor(&q_post)?;
    let b: Vec<f64> = model.wty.iter().map(|v| v / s2).collect();
    let mode = factor.solve(&b)?;
    let n = model.dataset.n() as f64;
    let log_marginal = 0.5 * parts.log_det - 0.5 * factor.log_det() - 0.5 * n * (2.0 * PI * s2).ln()
        - 0.5 * (model.yty / s2 - dotv(&mode, &b));
    if !log_marginal.is_finite() {
        return Err(ElkError::NonFiniteObjective("Gaussian log marginal".into()));
    }
    Ok(GaussianApprox { mode, precision_factor: factor, log_marginal, iterations: 0 })
}

/// Laplace approximation by damped Newton iterations on the latent vector.
pub fn laplace_latent_posterior(model: &LatentModel, hyper: &HyperParams, init: Option<&[f64]>) -> Result<GaussianApprox> {
    let parts = model.prior_parts(hyper)?;
    let prior = model.with_values(parts.values.clone());
    let dim = model.dim();
    let mut x = match init {
        Some(x0) if x0.len() == dim && x0.iter().all(|v| v.is_finite()) => x0.to_vec(),
        _ => vec![0.0; dim],
    };
    let mut f = model.log_joint(&x, &prior, hyper)?;
    if !f.is_finite() {
        x = vec![0.0; dim];
        f = model.log_joint(&x, &prior, hyper)?;
    }
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let eta = model.eta(&x);
        let (_, d1, d2) = model.log_lik(&eta, hyper);
        let mut g = model.w_transpose(&d1);
        for (gi, qi) in g.iter_mut().zip(prior.mul_vec(&x)?) {
            *gi -= qi;
        }
        grad_norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if grad_norm < NEWTON_GRAD_TOL {
            let w: Vec<f64> = d2.iter().map(|v| -v).collect();
            let factor = model.symbolic.factor(&model.posterior_precision(&parts.values, &w))?;
            let (ll, _, _) = model.log_lik(&eta, hyper);
            let quad = dotv(&x, &prior.mul_vec(&x)?);
            let log_marginal = ll - 0.5 * quad + 0.5 * parts.log_det - 0.5 * factor.log_det();
            if !log_marginal.is_finite() {
                return Err(ElkError::NonFiniteObjective("Laplace log marginal".into()));
            }
            return Ok(GaussianApprox { mode: x, precision_factor: factor, log_marginal, iterations });
        }
        if iterations >= NEWTON_MAX_ITER {
            return Err(ElkError::NotConverged { iterations, grad_norm });
        }
        iterations += 1;
        let w: Vec<f64> = d2.iter().map(|v| -v).collect();
        let factor = model.symbolic.factor(&model.posterior_precision(&parts.values, &w))?;
        let step = factor.solve(&g)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fnew = model.log_joint(&xn, &prior, hyper)?;
            if fnew.is_finite() && fnew >= f - 1e-12 * (1.0 + f.abs()) {
                x = xn;
                f = fnew;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(ElkError::NotConverged { iterations, grad_norm });
        }
    }
}

/// Latent posterior for whichever likelihood the model carries.
pub fn latent_posterior(model: &LatentModel, hyper: &HyperParams, init: Option<&[f64]>) -> Result<GaussianApprox> {
    match model.likelihood {
        Likelihood::Gaussian => gaussian_latent_posterior(model, hyper),
        Likelihood::BinomialLogit => laplace_latent_posterior(model, hyper, init),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::precision::DEFAULT_SPLINE_KNOTS;

    fn toy_points(n: usize) -> Vec<Point> {
        (0..n).map(|i| {
            let t = i as f64 * 0.618_033_988_749_895;
            [2.0 * (t.fract()) - 1.0, 2.0 * ((i as f64 + 0.5) / n as f64) - 1.0]
        }).collect()
    }

    fn hyper(l: usize, scheme: Scheme) -> HyperParams {
        let alpha = vec![1.0 / l as f64; l];
        let rho = match scheme {
            Scheme::ElkF => vec![0.7],
            Scheme::ElkT => (0..l).map(|i| 0.7 / (i + 1) as f64).collect(),
        };
        HyperParams { sigma2_s: 0.8, alpha, rho, sigma2_n: 0.05, scheme }
    }

    #[test]
    fn pc_prior_tail_and_range_median() {
        let p = PcSdPrior::default();
        assert!((1.0 - p.cdf(1.0) - 0.01).abs() < 1e-15);
        let r = InvExpPrior { median: 0.37 };
        assert!((r.cdf(0.37) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_concentration_and_symmetry() {
        let pr = PriorSpec::default();
        assert_eq!(pr.dirichlet(2), vec![0.75, 0.75]);
        let a = pr.dirichlet(2);
        assert!((log_dirichlet(&[0.3, 0.7], &a) - log_dirichlet(&[0.7, 0.3], &a)).abs() < 1e-14);
        // Beta(1,1) is uniform.
        assert!(log_dirichlet(&[0.2, 0.8], &[1.0, 1.0]).abs() < 1e-14);
    }

    #[test]
    fn transform_round_trip() {
        let h = HyperParams { sigma2_s: 1.0, alpha: vec![0.5, 0.5], rho: vec![0.2, 0.05], sigma2_n: 0.3, scheme: Scheme::ElkT };
        let t = transform(&h);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 0.0);
        let back = untransform(&t, Scheme::ElkT, 2).unwrap();
        assert!((back.sigma2_n - 0.3).abs() < 1e-15 && (back.rho[1] - 0.05).abs() < 1e-15);
        let h3 = HyperParams { sigma2_s: 2.5, alpha: vec![0.2, 0.3, 0.5], rho: vec![0.4], sigma2_n: 0.01, scheme: Scheme::ElkF };
        let b3 = untransform(&transform(&h3), Scheme::ElkF, 3).unwrap();
        for (a, b) in h3.alpha.iter().zip(&b3.alpha) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(untransform(&[f64::NAN, 0.0, 0.0], Scheme::ElkF, 1).is_err());
    }

    #[test]
    fn transformed_prior_jacobian_matches_numeric_volume() {
        // One-dimensional check on σ_S: ∫ p(θ) dθ over a slice equals the σ-scale probability.
        let basis = MultiresBasis::from_knot_counts(Domain::unit_square(), &[5], 1).unwrap();
        let pr = PriorSpec::default();
        let base = HyperParams { sigma2_s: 1.0, alpha: vec![1.0], rho: vec![0.5], sigma2_n: 0.1, scheme: Scheme::ElkF };
        let (a, b) = (-3.0f64, 0.5f64);
        let steps = 20000;
        let h = (b - a) / steps as f64;
        let other = log_prior_transformed(&base, &pr, &basis) - pr.sd_spatial.log_density(1.0) - (0.5f64).ln();
        let mut total = 0.0;
        for i in 0..=steps {
            let th = a + i as f64 * h;
            let hp = HyperParams { sigma2_s: th.exp(), ..base.clone() };
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            total += w * (log_prior_transformed(&hp, &pr, &basis) - other).exp();
        }
        total *= h;
        let exact = pr.sd_spatial.cdf((b / 2.0).exp()) - pr.sd_spatial.cdf((a / 2.0).exp());
        assert!((total - exact).abs() < 1e-8, "{total} vs {exact}");
    }

    fn gaussian_model(n: usize, counts: &[usize], scheme: Scheme) -> LatentModel {
        let pts = toy_points(n);
        let y: Vec<f64> = pts.iter().map(|p| (2.0 * p[0]).sin() + 0.5 * p[1]).collect();
        let basis = MultiresBasis::from_knot_counts(Domain::unit_square(), counts, 1).unwrap();
        let ds = Dataset::gaussian(pts, y).unwrap();
        LatentModel::new(ds, basis, scheme, PriorSpec::default(), None, DEFAULT_SPLINE_KNOTS).unwrap()
    }

    #[test]
    fn gaussian_newton_matches_exact() {
        let m = gaussian_model(40, &[4, 7], Scheme::ElkT);
        let h = hyper(2, Scheme::ElkT);
        let exact = gaussian_latent_posterior(&m, &h).unwrap();
        let lap = laplace_latent_posterior(&m, &h, None).unwrap();
        assert!(lap.iterations <= 2);
        let diff = exact.mode.iter().zip(&lap.mode).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-8, "{diff}");
        assert!((exact.log_marginal - lap.log_marginal).abs() < 1e-8);
    }

    #[test]
    fn huge_nugget_mode_goes_to_prior_mean() {
        let m = gaussian_model(30, &[5], Scheme::ElkF);
        let mut h = hyper(1, Scheme::ElkF);
        h.sigma2_n = 1e8;
        let post = gaussian_latent_posterior(&m, &h).unwrap();
        let c_norm: f64 = post.mode[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(c_norm < 1e-3);
    }

    #[test]
    fn intercept_absorbs_constant_shift() {
        let m = gaussian_model(35, &[5], Scheme::ElkF);
        let h = hyper(1, Scheme::ElkF);
        let base = gaussian_latent_posterior(&m, &h).unwrap();
        let mut ds = m.dataset.clone();
        if let Response::Gaussian { values } = &mut ds.response {
            values.iter_mut().for_each(|v| *v += 3.0);
        }
        let m2 = LatentModel::new(ds, m.basis.clone(), m.scheme, m.priors.clone(), Some(m.splines.clone()), 0).unwrap();
        let shifted = gaussian_latent_posterior(&m2, &h).unwrap();
        assert!((shifted.mode[0] - base.mode[0] - 3.0).abs() < 1e-6);
        let dc = base.mode[1..].iter().zip(&shifted.mode[1..]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(dc < 1e-8, "{dc}");
    }

    #[test]
    fn binomial_derivatives_match_finite_differences() {
        let succ = [3u64, 0, 7, 10];
        let tri = [10u64, 4, 7, 12];
        let eta = [0.3, -1.2, 2.5, 0.0];
        let (_, d1, d2) = binomial_terms(&succ, &tri, &eta);
        let h = 1e-5;
        for i in 0..4 {
            let f = |v: f64| {
                let mut e = eta;
                e[i] = v;
                binomial_terms(&succ, &tri, &e)
            };
            let (lp, dp, _) = f(eta[i] + h);
            let (lm, dm, _) = f(eta[i] - h);
            let g = (lp - lm) / (2.0 * h);
            let hh = (dp[i] - dm[i]) / (2.0 * h);
            assert!((g - d1[i]).abs() <= 1e-6 * d1[i].abs().max(1.0));
            assert!((hh - d2[i]).abs() <= 1e-6 * d2[i].abs().max(1.0));
        }
    }

    #[test]
    fn binomial_laplace_converges() {
        let pts = toy_points(60);
        let succ: Vec<u64> = pts.iter().map(|p| ((p[0] + 1.0) * 4.0) as u64).collect();
        let tri = vec![9u64; 60];
        let urban: Vec<f64> = (0..60).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let ds = Dataset::binomial(pts, succ, tri, Some(urban), None).unwrap();
        let basis = MultiresBasis::from_knot_counts(Domain::unit_square(), &[5], 1).unwrap();
        let m = LatentModel::new(ds, basis, Scheme::ElkF, PriorSpec::default(), None, 10).unwrap();
        assert_eq!(m.dim(), 2 + 49 + 60);
        let h = hyper(1, Scheme::ElkF);
        let post = laplace_latent_posterior(&m, &h, None).unwrap();
        let g = m.log_joint_gradient(&post.mode, &h).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
        assert!(post.log_marginal.is_finite());
    }

    #[test]
    fn dataset_validation() {
        let pts = toy_points(2);
        assert!(Dataset::binomial(pts.clone(), vec![3, 1], vec![2, 1], None, None).is_err());
        assert!(Dataset::binomial(pts.clone(), vec![0, 1], vec![0, 1], None, None).is_err());
        assert!(Dataset::gaussian(pts, vec![1.0]).is_err());
    }
}
