//! Dense Matérn ν = 1 Gaussian process with an unknown constant mean.
//!
//! Hyperparameters (log σ_S², log ρ, log σ_N²) are set to the mode of the restricted likelihood
//! (the mean integrated out under a flat prior) times the same priors the lattice models use.
//! Predictions are universal kriging, pointwise or averaged over areas of a grid.

use serde::{Deserialize, Serialize};

use crate::cholesky::DenseCholesky;
use crate::error::{invalid, ElkError, Result};
use crate::geometry::{Domain, Point};
use crate::inference::fit::{central_hessian, minimize_with_restarts, repair_hessian};
use crate::inference::{Area, FitSettings};
use crate::model::{InvExpPrior, PriorSpec};
use crate::rng::stream_rng;
use crate::special::matern1_corr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub sigma2_s: f64,
    pub rho: f64,
    pub sigma2_n: f64,
}

impl GpHyper {
    pub fn from_transformed(t: &[f64]) -> GpHyper {
        GpHyper { sigma2_s: t[0].exp(), rho: t[1].exp(), sigma2_n: t[2].exp() }
    }

    pub fn transformed(&self) -> Vec<f64> {
        vec![self.sigma2_s.ln(), self.rho.ln(), self.sigma2_n.ln()]
    }

    pub fn cov(&self, d: f64) -> f64 {
        self.sigma2_s * matern1_corr(d, self.rho)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// A GP conditioned on observations at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct MaternGp {
    pub hyper: GpHyper,
    locs: Vec<Point>,
    chol: DenseCholesky,
    /// `L⁻¹ 1`.
    w_one: Vec<f64>,
    /// `1ᵀ K⁻¹ 1`.
    one_k_one: f64,
    pub beta: f64,
    /// `K⁻¹ (y − β 1)`.
    alpha: Vec<f64>,
    /// Restricted log likelihood at `hyper`.
    pub log_lik: f64,
}

impl MaternGp {
    pub fn condition(locs: &[Point], y: &[f64], hyper: GpHyper) -> Result<Self> {
        let n = locs.len();
        if n == 0 || y.len() != n {
            return Err(ElkError::DimensionMismatch("GP needs matching non-empty locations and values".into()));
        }
        if !(hyper.sigma2_s > 0.0 && hyper.rho > 0.0 && hyper.sigma2_n >= 0.0) {
            return Err(invalid!("GP hyperparameters must be positive"));
        }
        let c0 = hyper.sigma2_s + hyper.sigma2_n;
        let chol = DenseCholesky::from_fn(n, |i, j| if i == j { c0 } else { hyper.cov(dist(locs[i], locs[j])) })?;
        let mut w_one = vec![1.0; n];
        chol.forward_solve(&mut w_one);
        let one_k_one: f64 = w_one.iter().map(|v| v * v).sum();
        let mut wy = y.to_vec();
        chol.forward_solve(&mut wy);
        let beta = w_one.iter().zip(&wy).map(|(a, b)| a * b).sum::<f64>() / one_k_one;
        let mut alpha: Vec<f64> = wy.iter().zip(&w_one).map(|(a, b)| a - beta * b).collect();
        let quad: f64 = alpha.iter().map(|v| v * v).sum();
        chol.backward_solve(&mut alpha);
        let log_lik = -0.5 * chol.log_det() - 0.5 * one_k_one.ln() - 0.5 * quad - 0.5 * (n as f64 - 1.0) * (2.0 * std::f64::consts::PI).ln();
        Ok(MaternGp { hyper, locs: locs.to_vec(), chol, w_one, one_k_one, beta, alpha, log_lik })
    }

    fn cross(&self, p: Point) -> Vec<f64> {
        self.locs.iter().map(|&x| self.hyper.cov(dist(p, x))).collect()
    }

    /// Mean and variance from a (possibly averaged) cross-covariance vector and prior variance.
    fn moments(&self, k: &[f64], prior_var: f64) -> (f64, f64) {
        let mean = self.beta + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = k.to_vec();
        self.chol.forward_solve(&mut v);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        let u = 1.0 - self.w_one.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        (mean, (prior_var - explained + u * u / self.one_k_one).max(0.0))
    }

    /// Predictive means and variances; `include_nugget` predicts Y rather than the smooth field.
    pub fn predict(&self, targets: &[Point], include_nugget: bool) -> (Vec<f64>, Vec<f64>) {
        let prior = self.hyper.sigma2_s + if include_nugget { self.hyper.sigma2_n } else { 0.0 };
        targets.iter().map(|&p| self.moments(&self.cross(p), prior)).unzip()
    }

    /// Predictive means and variances of unweighted area averages over grid cells.
    pub fn predict_areas(&self, grid: &[Point], areas: &[Area], include_nugget: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut means = Vec::with_capacity(areas.len());
        let mut vars = Vec::with_capacity(areas.len());
        for a in areas {
            if a.cells.is_empty() {
                return Err(invalid!("area {} has no cells", a.id));
            }
            if a.weights.is_some() {
                return Err(invalid!("weighted areas are not supported by the GP baseline"));
            }
            let m = a.cells.len() as f64;
            let mut k = vec![0.0; self.locs.len()];
            for &c in &a.cells {
                for (s, v) in k.iter_mut().zip(self.cross(grid[c])) {
                    *s += v / m;
                }
            }
            let mut prior = 0.0;
            for &i in &a.cells {
                for &j in &a.cells {
                    prior += self.hyper.cov(dist(grid[i], grid[j]));
                }
            }
            prior /= m * m;
            if include_nugget {
                prior += self.hyper.sigma2_n / m;
            }
            let (mu, var) = self.moments(&k, prior);
            means.push(mu);
            vars.push(var);
        }
        Ok((means, vars))
    }
}

/// Log restricted likelihood plus log priors, on the transformed scale.
pub fn gp_log_posterior(locs: &[Point], y: &[f64], theta: &[f64], priors: &PriorSpec, range_median: f64) -> f64 {
    let h = GpHyper::from_transformed(theta);
    if !(h.sigma2_s.is_finite() && h.rho.is_finite() && h.sigma2_n.is_finite() && h.sigma2_s > 0.0 && h.rho > 0.0 && h.sigma2_n > 0.0) {
        return f64::NEG_INFINITY;
    }
    let Ok(gp) = MaternGp::condition(locs, y, h) else {
        return f64::NEG_INFINITY;
    };
    let (ss, sn) = (h.sigma2_s.sqrt(), h.sigma2_n.sqrt());
    let lp = priors.sd_spatial.log_density(ss)
        + (ss / 2.0).ln()
        + priors.sd_nugget.log_density(sn)
        + (sn / 2.0).ln()
        + InvExpPrior { median: range_median }.log_density(h.rho)
        + h.rho.ln();
    gp.log_lik + lp
}

#[derive(Debug, Clone)]
pub struct GpFit {
    pub gp: MaternGp,
    pub mode_transformed: Vec<f64>,
    /// Posterior standard deviations of the transformed coordinates.
    pub sd: Vec<f64>,
    pub log_posterior: f64,
    pub evaluations: usize,
    pub ridge_degenerate: bool,
}

/// Mode of the baseline's hyperparameter posterior, with curvature-based standard deviations.
pub fn fit_matern_gp(locs: &[Point], y: &[f64], domain: &Domain, priors: &PriorSpec, settings: &FitSettings, seed: u64) -> Result<GpFit> {
    let n = y.len() as f64;
    if y.len() < 2 {
        return Err(invalid!("GP baseline needs at least two observations"));
    }
    let mean = y.iter().sum::<f64>() / n;
    let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-6);
    let range_median = priors.range_median.unwrap_or(domain.diameter() / 5.0);
    let init = GpHyper { sigma2_s: 0.8 * var, rho: range_median, sigma2_n: 0.2 * var };
    let neg = |t: &[f64]| -gp_log_posterior(locs, y, t, priors, range_median);
    let theta0 = init.transformed();
    if !neg(&theta0).is_finite() {
        return Err(ElkError::NonFiniteObjective("GP baseline objective at its starting point".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let (best, mut evaluations) = minimize_with_restarts(neg, &theta0, settings, &mut rng)?;
    let hess = central_hessian(neg, &best.x, settings.hessian_step)?;
    evaluations += 2 * best.x.len() * best.x.len() + 2;
    let repaired = repair_hessian(&hess);
    let sd = (0..best.x.len()).map(|i| repaired.covariance[(i, i)].sqrt()).collect();
    let gp = MaternGp::condition(locs, y, GpHyper::from_transformed(&best.x))?;
    Ok(GpFit { gp, mode_transformed: best.x, sd, log_posterior: -best.value, evaluations, ridge_degenerate: repaired.ridge_degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{CovModel, MaternComponent};
    use crate::study::design::{regular_grid, simulate_grf};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn noiseless_single_observation_is_interpolated() {
        let gp = MaternGp::condition(&[[0.2, 0.3]], &[1.7], GpHyper { sigma2_s: 1.0, rho: 0.5, sigma2_n: 1e-12 }).unwrap();
        let (m, v) = gp.predict(&[[0.2, 0.3]], false);
        assert!((m[0] - 1.7).abs() < 1e-12);
        assert!(v[0] < 1e-9);
    }

    #[test]
    fn far_predictions_revert_to_the_prior() {
        let h = GpHyper { sigma2_s: 0.7, rho: 0.1, sigma2_n: 0.05 };
        let locs: Vec<Point> = (0..50).map(|i| [(i % 10) as f64 * 0.02, (i / 10) as f64 * 0.02]).collect();
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let gp = MaternGp::condition(&locs, &y, h).unwrap();
        let (m, v) = gp.predict(&[[50.0, 50.0]], true);
        assert!((m[0] - gp.beta).abs() < 1e-12);
        // Only the uncertainty about the mean remains on top of the prior variance.
        assert!(v[0] >= 0.75 && v[0] < 0.75 + 1.0 / gp.one_k_one + 1e-12);
    }

    /// Universal kriging by the bordered dense system, as an independent check.
    #[test]
    fn kriging_matches_bordered_system() {
        let h = GpHyper { sigma2_s: 1.3, rho: 0.4, sigma2_n: 0.1 };
        let locs: Vec<Point> = (0..12).map(|i| [((i * 7) % 12) as f64 / 12.0, (i as f64 * 0.61).fract()]).collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let gp = MaternGp::condition(&locs, &y, h).unwrap();
        let t = [0.33, 0.71];
        let n = locs.len();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = h.cov(dist(locs[i], locs[j])) + if i == j { h.sigma2_n } else { 0.0 };
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = h.cov(dist(t, locs[i]));
        }
        rhs[n] = 1.0;
        let lam = a.lu().solve(&rhs).unwrap();
        let mean: f64 = (0..n).map(|i| lam[i] * y[i]).sum();
        let var = h.sigma2_s + h.sigma2_n - (0..n).map(|i| lam[i] * rhs[i]).sum::<f64>() - lam[n];
        let (m, v) = gp.predict(&[t], true);
        assert!((m[0] - mean).abs() < 1e-10, "{} {}", m[0], mean);
        assert!((v[0] - var).abs() < 1e-10, "{} {}", v[0], var);
    }

    #[test]
    fn single_cell_area_equals_point() {
        let h = GpHyper { sigma2_s: 1.0, rho: 0.3, sigma2_n: 0.01 };
        let locs = vec![[0.1, 0.1], [0.5, 0.9], [0.8, 0.2]];
        let gp = MaternGp::condition(&locs, &[0.3, -0.2, 0.5], h).unwrap();
        let grid = vec![[0.4, 0.4], [0.6, 0.6]];
        let (pm, pv) = gp.predict(&grid[..1], true);
        let (am, av) = gp.predict_areas(&grid, &[Area { id: "a".into(), cells: vec![0], weights: None }], true).unwrap();
        assert!((pm[0] - am[0]).abs() < 1e-14 && (pv[0] - av[0]).abs() < 1e-14);
    }

    #[test]
    fn recovers_a_single_matern_range() {
        let cov = CovModel::new(vec![MaternComponent { weight: 1.0, rho: 0.3 }], None).unwrap();
        let domain = Domain::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let locs = regular_grid(&domain, 15);
        let mut rng = stream_rng(42, 9);
        let u = simulate_grf(&locs, &cov, &mut rng).unwrap();
        let y: Vec<f64> = u.iter().enumerate().map(|(i, v)| v + 0.1 * ((i as f64 * 12.9898).sin() * 43758.5453).fract()).collect();
        let fit = fit_matern_gp(&locs, &y, &domain, &PriorSpec::default(), &FitSettings { restarts: 1, ..FitSettings::default() }, 1).unwrap();
        let z = (fit.mode_transformed[1] - 0.3f64.ln()) / fit.sd[1];
        assert!(z.abs() < 3.0, "log range off by {z} sds");
    }
}
