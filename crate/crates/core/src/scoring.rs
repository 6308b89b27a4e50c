//! RMSE, CRPS variants, central-interval and fuzzy coverage, and nearest-observation distance bins.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ElkError, Result};
use crate::geometry::Point;

/// z-value of the 90% standard normal quantile.
pub const Z90: f64 = 1.281_551_565_544_600_4;

pub fn rmse(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(invalid!("rmse of an empty set"));
    }
    if truth.len() != est.len() {
        return Err(ElkError::DimensionMismatch("rmse inputs differ in length".into()));
    }
    let ss: f64 = truth.iter().zip(est).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Closed-form CRPS of `N(mu, sigma²)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid!("crps_gaussian needs sigma > 0, got {sigma}"));
    }
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / PI.sqrt()))
}

/// Sample CRPS `E|X − y| − ½E|X − X′|` over all ordered pairs, via sorting.
pub fn crps_samples(draws: &[f64], y: f64) -> Result<f64> {
    let n = draws.len();
    if n < 2 {
        return Err(invalid!("crps_samples needs at least two draws"));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let abs_dev: f64 = s.iter().map(|x| (x - y).abs()).sum::<f64>() / nf;
    // Σ_{i,j} |x_i − x_j| = 2 Σ_i (2i − n + 1) x_(i)
    let pair: f64 = s.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - nf + 1.0) * x).sum::<f64>() * 2.0;
    Ok(abs_dev - 0.5 * pair / (nf * nf))
}

/// CRPS of a predictive on the proportion grid `{0, 1/N, …, 1}`, given its CDF at each grid point.
pub fn crps_discrete_proportion(cdf: &[f64], y: f64) -> Result<f64> {
    if cdf.len() < 2 {
        return Err(invalid!("grid CDF needs at least two points"));
    }
    if cdf.windows(2).any(|w| w[1] < w[0] - 1e-12) || cdf.iter().any(|&f| !(-1e-12..=1.0 + 1e-12).contains(&f)) {
        return Err(invalid!("grid CDF must be monotone within [0, 1]"));
    }
    if (cdf[cdf.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(invalid!("grid CDF must reach 1"));
    }
    let n = (cdf.len() - 1) as f64;
    let yn = y * n;
    let s: f64 = cdf
        .iter()
        .enumerate()
        .map(|(j, &f)| {
            let ind = if j as f64 >= yn - 1e-9 { 1.0 } else { 0.0 };
            (ind - f) * (ind - f)
        })
        .sum();
    Ok(s / n)
}

/// Randomized central interval on the proportion grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyInterval {
    pub n: usize,
    pub lower: usize,
    pub upper: usize,
    pub p_reject_lower: f64,
    pub p_reject_upper: f64,
}

impl FuzzyInterval {
    pub fn ql(&self) -> f64 {
        self.lower as f64 / self.n as f64
    }

    pub fn qu(&self) -> f64 {
        self.upper as f64 / self.n as f64
    }
}

/// Discrete `α/2` quantiles with boundary rejection probabilities chosen so expected coverage is `1 − α`.
pub fn fuzzy_interval(pmf: &[f64], alpha: f64) -> Result<FuzzyInterval> {
    if pmf.len() < 2 {
        return Err(invalid!("pmf needs at least two grid points"));
    }
    if pmf.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(invalid!("pmf must be non-negative and sum to 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid!("alpha must lie in (0, 1)"));
    }
    let half = 0.5 * alpha;
    let n = pmf.len() - 1;
    let mut below = vec![0.0; n + 1];
    for j in 1..=n {
        below[j] = below[j - 1] + pmf[j - 1];
    }
    let mut above = vec![0.0; n + 1];
    for j in (0..n).rev() {
        above[j] = above[j + 1] + pmf[j + 1];
    }
    let lower = (0..=n).rev().find(|&j| below[j] <= half).unwrap_or(0);
    let upper = (0..=n).find(|&j| above[j] <= half).unwrap_or(n);
    let reject = |tail: f64, mass: f64| if mass > 0.0 { ((half - tail) / mass).clamp(0.0, 1.0) } else { 0.0 };
    Ok(FuzzyInterval {
        n,
        lower,
        upper,
        p_reject_lower: reject(below[lower], pmf[lower]),
        p_reject_upper: reject(above[upper], pmf[upper]),
    })
}

/// Membership of grid index `j`: 1 inside, one minus the rejection probability on a boundary, 0 outside.
pub fn fuzzy_coverage_index(iv: &FuzzyInterval, j: usize) -> f64 {
    if j < iv.lower || j > iv.upper {
        0.0
    } else if iv.lower == iv.upper {
        1.0 - iv.p_reject_lower - iv.p_reject_upper
    } else if j == iv.lower {
        1.0 - iv.p_reject_lower
    } else if j == iv.upper {
        1.0 - iv.p_reject_upper
    } else {
        1.0
    }
}

/// Membership of an observed proportion `y` (rounded to the nearest grid point).
pub fn fuzzy_coverage(iv: &FuzzyInterval, y: f64) -> f64 {
    let j = (y * iv.n as f64).round();
    if j < 0.0 {
        return 0.0;
    }
    fuzzy_coverage_index(iv, j as usize)
}

pub fn fuzzy_width(iv: &FuzzyInterval) -> f64 {
    let n = iv.n as f64;
    ((iv.upper as f64 - iv.lower as f64) / n - (iv.p_reject_lower + iv.p_reject_upper) / n).max(0.0)
}

/// Distance from each target to its nearest observation.
pub fn nearest_distances(targets: &[Point], observations: &[Point]) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(invalid!("no observations to measure distances from"));
    }
    Ok(targets
        .iter()
        .map(|t| observations.iter().map(|o| (t[0] - o[0]).hypot(t[1] - o[1])).fold(f64::INFINITY, f64::min))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBins {
    pub edges: Vec<f64>,
    pub distances: Vec<f64>,
    /// Target indices per bin; the final entry collects targets beyond the last edge.
    pub members: Vec<Vec<usize>>,
}

/// Bin index for `d`: left-closed bins, last bin right-closed, `edges.len() - 1` for overflow.
pub fn bin_index(edges: &[f64], d: f64) -> usize {
    let nb = edges.len() - 1;
    if d > edges[nb] {
        return nb;
    }
    if d < edges[0] {
        return 0;
    }
    let k = edges.partition_point(|&e| e <= d);
    (k.max(1) - 1).min(nb - 1)
}

/// `n` equal-width bins spanning the range of `distances`.
pub fn equal_width_edges(distances: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || distances.is_empty() {
        return Err(invalid!("equal-width bins need n ≥ 1 and at least one distance"));
    }
    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    Ok((0..=n).map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 }).collect())
}

pub fn bin_by_distance(targets: &[Point], observations: &[Point], edges: &[f64]) -> Result<DistanceBins> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid!("bin edges must be at least two strictly increasing values"));
    }
    let distances = nearest_distances(targets, observations)?;
    let mut members = vec![Vec::new(); edges.len()];
    for (i, &d) in distances.iter().enumerate() {
        members[bin_index(edges, d)].push(i);
    }
    Ok(DistanceBins { edges: edges.to_vec(), distances, members })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScore {
    pub lower: f64,
    /// `None` for the overflow bin.
    pub upper: Option<f64>,
    pub n: usize,
    pub rmse: Option<f64>,
    pub crps: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub rmse: f64,
    pub crps: f64,
    /// Percent of targets inside the central 80% interval.
    pub coverage: f64,
    pub width: f64,
    pub bins: Vec<BinScore>,
}

/// Per-target predictive summaries that scoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScore {
    pub mean: f64,
    pub crps: f64,
    pub covered: f64,
    pub width: f64,
}

/// Scores from predictive draws: mean, sample CRPS, and the empirical 10–90% interval.
pub fn score_samples(draws: &[f64], truth: f64) -> Result<TargetScore> {
    let s = crate::inference::predict::summarize(draws);
    Ok(TargetScore {
        mean: s.mean,
        crps: crps_samples(draws, truth)?,
        covered: ((s.q10..=s.q90).contains(&truth)) as u8 as f64,
        width: s.q90 - s.q10,
    })
}

/// Scores of a Gaussian predictive with the central 80% interval.
pub fn score_gaussian(mean: f64, sd: f64, truth: f64) -> Result<TargetScore> {
    Ok(TargetScore {
        mean,
        crps: crps_gaussian(mean, sd, truth)?,
        covered: ((truth - mean).abs() <= Z90 * sd) as u8 as f64,
        width: 2.0 * Z90 * sd,
    })
}

/// Averages per-target scores into a report, optionally split into distance bins.
pub fn report(scores: &[TargetScore], truth: &[f64], bins: Option<&DistanceBins>) -> Result<ScoreReport> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(ElkError::DimensionMismatch("scores and truth must be non-empty and equal length".into()));
    }
    let n = scores.len() as f64;
    let means: Vec<f64> = scores.iter().map(|s| s.mean).collect();
    let bin_rows = match bins {
        None => vec![],
        Some(b) => b
            .members
            .iter()
            .enumerate()
            .map(|(k, idx)| {
                let sub = |f: &dyn Fn(&TargetScore) -> f64| -> Option<f64> {
                    (!idx.is_empty()).then(|| idx.iter().map(|&i| f(&scores[i])).sum::<f64>() / idx.len() as f64)
                };
                let r = if idx.is_empty() {
                    None
                } else {
                    let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
                    let e: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
                    Some(rmse(&t, &e)?)
                };
                Ok(BinScore {
                    lower: b.edges[k],
                    upper: b.edges.get(k + 1).copied(),
                    n: idx.len(),
                    rmse: r,
                    crps: sub(&|s| s.crps),
                    coverage: sub(&|s| s.covered).map(|c| 100.0 * c),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ScoreReport {
        n: scores.len(),
        rmse: rmse(truth, &means)?,
        crps: scores.iter().map(|s| s.crps).sum::<f64>() / n,
        coverage: 100.0 * scores.iter().map(|s| s.covered).sum::<f64>() / n,
        width: scores.iter().map(|s| s.width).sum::<f64>() / n,
        bins: bin_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap() - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn crps_gaussian_examples() {
        assert!(crps_gaussian(0.3, 1e-8, 0.3).unwrap() < 1e-7);
        assert!((crps_gaussian(0.0, 1.0, 0.0).unwrap() - (SQRT_2 - 1.0) / PI.sqrt()).abs() < 1e-15);
        assert!(crps_gaussian(0.0, 0.0, 0.0).is_err());
        let mut prev = crps_gaussian(0.0, 0.7, 0.0).unwrap();
        for i in 1..50 {
            let v = crps_gaussian(0.0, 0.7, i as f64 * 0.1).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    fn brute_crps(draws: &[f64], y: f64) -> f64 {
        let n = draws.len() as f64;
        let a: f64 = draws.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let b: f64 = draws.iter().flat_map(|x| draws.iter().map(move |z| (x - z).abs())).sum::<f64>() / (n * n);
        a - 0.5 * b
    }

    #[test]
    fn crps_samples_examples() {
        assert_eq!(crps_samples(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!((crps_samples(&[0.0, 1.0], 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(crps_samples(&[1.0], 0.0).is_err());
    }

    #[test]
    fn discrete_crps_examples() {
        assert_eq!(crps_discrete_proportion(&[0.0, 0.0, 1.0, 1.0], 2.0 / 3.0).unwrap(), 0.0);
        assert!((crps_discrete_proportion(&[0.5, 1.0], 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(crps_discrete_proportion(&[0.6, 0.5, 1.0], 0.0).is_err());
    }

    #[test]
    fn discrete_crps_equals_sample_crps_of_the_same_pmf() {
        // Exact draw multiset with pmf (0.2, 0.5, 0.3) on {0, 1/2, 1}.
        let mut draws = vec![0.0; 20];
        draws.extend(vec![0.5; 50]);
        draws.extend(vec![1.0; 30]);
        for &y in &[0.0, 0.5, 1.0] {
            let a = crps_discrete_proportion(&[0.2, 0.7, 1.0], y).unwrap();
            let b = crps_samples(&draws, y).unwrap();
            assert!((a - b).abs() < 1e-12, "{y}: {a} vs {b}");
        }
    }

    #[test]
    fn fuzzy_binomial_example() {
        let iv = fuzzy_interval(&[0.25, 0.5, 0.25], 0.2).unwrap();
        assert_eq!((iv.ql(), iv.qu()), (0.0, 1.0));
        assert!((iv.p_reject_lower - 0.4).abs() < 1e-15 && (iv.p_reject_upper - 0.4).abs() < 1e-15);
        assert!((fuzzy_coverage(&iv, 0.0) - 0.6).abs() < 1e-15);
        assert_eq!(fuzzy_coverage(&iv, 0.5), 1.0);
        assert!((fuzzy_width(&iv) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fuzzy_point_mass_and_gap() {
        let iv = fuzzy_interval(&[0.0, 1.0, 0.0], 0.2).unwrap();
        assert_eq!((iv.lower, iv.upper), (1, 1));
        assert!((iv.p_reject_lower - 0.1).abs() < 1e-15 && (iv.p_reject_upper - 0.1).abs() < 1e-15);
        assert!((fuzzy_coverage(&iv, 0.5) - 0.8).abs() < 1e-15);
        assert_eq!(fuzzy_width(&iv), 0.0);
        let iv = fuzzy_interval(&[0.05, 0.0, 0.9, 0.05], 0.2).unwrap();
        assert_eq!((iv.lower, iv.upper), (2, 2));
        assert_eq!(fuzzy_coverage(&iv, 1.0 / 3.0), 0.0);
    }

    #[test]
    fn distance_binning() {
        assert_eq!(bin_index(&[0.0, 0.1, 0.2], 0.1), 1);
        assert_eq!(bin_index(&[0.0, 0.1, 0.2], 0.2), 1);
        assert_eq!(bin_index(&[0.0, 0.1, 0.2], 0.0), 0);
        assert_eq!(bin_index(&[0.0, 0.1, 0.2], 0.25), 2);
        let obs = [[0.0, 0.0], [1.0, 1.0]];
        let b = bin_by_distance(&[[0.0, 0.0], [0.5, 0.5], [3.0, 3.0]], &obs, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(b.members, vec![vec![0], vec![1], vec![2]]);
    }

    proptest! {
        #[test]
        fn sorted_crps_matches_brute_force(draws in proptest::collection::vec(-5.0f64..5.0, 2..60), y in -6.0f64..6.0) {
            let a = crps_samples(&draws, y).unwrap();
            prop_assert!((a - brute_crps(&draws, y)).abs() < 1e-12);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn fuzzy_expected_coverage_is_exact(weights in proptest::collection::vec(0.0f64..1.0, 2..31), a in 0usize..2) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 0.0);
            let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let alpha = [0.1, 0.2][a];
            let iv = fuzzy_interval(&pmf, alpha).unwrap();
            let e: f64 = pmf.iter().enumerate().map(|(j, p)| p * fuzzy_coverage_index(&iv, j)).sum();
            prop_assert!((e - (1.0 - alpha)).abs() < 1e-12);
        }

        #[test]
        fn binning_matches_brute_force(pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..40)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let (obs, tgt) = pts.split_at(pts.len() / 2);
            prop_assume!(!obs.is_empty());
            let d = nearest_distances(tgt, obs).unwrap();
            for (t, &dt) in tgt.iter().zip(&d) {
                let best = obs.iter().map(|o| ((t[0]-o[0]).powi(2) + (t[1]-o[1]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min);
                prop_assert!((best - dt).abs() < 1e-15);
            }
        }
    }
}
