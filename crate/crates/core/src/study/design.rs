//! Gaussian random field draws and the 3×3 holdout design.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cholesky::DenseCholesky;
use crate::error::{ElkError, Result};
use crate::geometry::{Domain, Point};
use crate::inference::Area;
use crate::rng::{purpose, replicate_rng};
use crate::special::CovModel;

use super::StudyConfig;

/// Index of the central cell in the row-major 3×3 partition.
pub const CENTRAL_CELL: usize = 4;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// One draw of a zero-mean field with covariance `cov` at `locations`.
pub fn simulate_grf<R: Rng + ?Sized>(locations: &[Point], cov: &CovModel, rng: &mut R) -> Result<Vec<f64>> {
    let n = locations.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let c0 = cov.cov(0.0);
    let mut jitter = 1e-8 * c0;
    let mut factor = None;
    for _ in 0..4 {
        match DenseCholesky::from_fn(n, |i, j| {
            if i == j {
                c0 + jitter
            } else {
                cov.cov(dist(locations[i], locations[j]))
            }
        }) {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(ElkError::NotPositiveDefinite { .. }) => jitter *= 10.0,
            Err(e) => return Err(e),
        }
    }
    let factor = factor.ok_or_else(|| ElkError::Numerical(format!("field covariance not positive definite with jitter {jitter:e}")))?;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(factor.lower_mul(&z))
}

/// Cell-centre points of an `n × n` grid over `domain`, x varying fastest.
pub fn regular_grid(domain: &Domain, n: usize) -> Vec<Point> {
    let (dx, dy) = (domain.width() / n as f64, domain.height() / n as f64);
    (0..n)
        .flat_map(|iy| (0..n).map(move |ix| [domain.x_min + (ix as f64 + 0.5) * dx, domain.y_min + (iy as f64 + 0.5) * dy]))
        .collect()
}

/// Row-major index of the 3×3 partition cell containing `p`.
pub fn partition_cell(domain: &Domain, p: Point) -> usize {
    let ix = ((p[0] - domain.x_min) / domain.width() * 3.0).floor().clamp(0.0, 2.0) as usize;
    let iy = ((p[1] - domain.y_min) / domain.height() * 3.0).floor().clamp(0.0, 2.0) as usize;
    iy * 3 + ix
}

/// The nine partition cells as areas over `grid`.
pub fn partition_areas(domain: &Domain, grid: &[Point]) -> Vec<Area> {
    let mut cells = vec![Vec::new(); 9];
    for (i, &p) in grid.iter().enumerate() {
        cells[partition_cell(domain, p)].push(i);
    }
    cells.into_iter().enumerate().map(|(k, cells)| Area { id: format!("cell{k}"), cells, weights: None }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub obs: Vec<Point>,
    pub obs_y: Vec<f64>,
    pub grid: Vec<Point>,
    pub grid_y: Vec<f64>,
    pub areas: Vec<Area>,
    /// Mean of `grid_y` over each partition cell.
    pub areal_truth: Vec<f64>,
}

/// Uniform locations in the eight outer cells: pick a cell uniformly, then a point inside it.
pub fn design_locations(cfg: &StudyConfig, replicate: u64) -> Vec<Point> {
    let d = &cfg.domain;
    let mut rng = replicate_rng(cfg.seed, replicate, purpose::DESIGN);
    let (cw, ch) = (d.width() / 3.0, d.height() / 3.0);
    (0..cfg.n_obs)
        .map(|_| {
            let mut cell = rng.random_range(0..8usize);
            if cell >= CENTRAL_CELL {
                cell += 1;
            }
            let (cx, cy) = ((cell % 3) as f64, (cell / 3) as f64);
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            [d.x_min + (cx + u) * cw, d.y_min + (cy + v) * ch]
        })
        .collect()
}

/// Observation and grid values for one replicate; the truth process includes the nugget.
pub fn design_3x3(cfg: &StudyConfig, replicate: u64) -> Result<Design> {
    let obs = design_locations(cfg, replicate);
    let grid = regular_grid(&cfg.domain, cfg.grid);
    let mut all = obs.clone();
    all.extend_from_slice(&grid);
    let field = simulate_grf(&all, &cfg.cov, &mut replicate_rng(cfg.seed, replicate, purpose::FIELD))?;
    let mut rng = replicate_rng(cfg.seed, replicate, purpose::NUGGET);
    let y: Vec<f64> = field.iter().map(|u| u + cfg.nugget_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let (obs_y, grid_y) = y.split_at(obs.len());
    let areas = partition_areas(&cfg.domain, &grid);
    let areal_truth = areas.iter().map(|a| a.cells.iter().map(|&c| grid_y[c]).sum::<f64>() / a.cells.len() as f64).collect();
    Ok(Design { obs, obs_y: obs_y.to_vec(), grid, grid_y: grid_y.to_vec(), areas, areal_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::special::MaternComponent;

    #[test]
    fn coincident_points_share_a_value() {
        let cov = CovModel::two_scale_mixture();
        let v = simulate_grf(&[[0.1, 0.2], [0.1, 0.2], [0.5, 0.5]], &cov, &mut stream_rng(3, 0)).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-3);
    }

    #[test]
    fn marginal_variance_and_correlation() {
        let cov = CovModel::two_scale_mixture();
        let pts = [[0.0, 0.0], [0.8, 0.0]];
        let mut rng = stream_rng(11, 0);
        let n = 2000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| simulate_grf(&pts, &cov, &mut rng).unwrap()).collect();
        let var0 = draws.iter().map(|d| d[0] * d[0]).sum::<f64>() / n as f64;
        assert!((var0 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var0}");
        let target = cov.cov(0.8);
        let c = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n as f64;
        // Var(XY) = 1 + ρ² for unit-variance normals.
        let se = ((1.0 + target * target) / n as f64).sqrt();
        assert!((c - target).abs() < 4.0 * se, "{c} vs {target}");
    }

    #[test]
    fn single_matern_component_matches_its_correlation() {
        let cov = CovModel::new(vec![MaternComponent { weight: 2.0, rho: 0.3 }], None).unwrap();
        assert!((cov.cov(0.3) / 2.0 - 0.13966).abs() < 1e-4);
    }

    #[test]
    fn design_leaves_the_centre_empty_and_is_reproducible() {
        let cfg = StudyConfig { n_obs: 800, grid: 12, ..StudyConfig::smoke() };
        let locs = design_locations(&cfg, 0);
        assert_eq!(locs.len(), 800);
        let mut counts = [0usize; 9];
        for &p in &locs {
            assert!(cfg.domain.contains(p));
            counts[partition_cell(&cfg.domain, p)] += 1;
        }
        assert_eq!(counts[CENTRAL_CELL], 0);
        // χ² with 7 degrees of freedom; 24.3 is its 0.999 quantile.
        let chi2: f64 = counts.iter().enumerate().filter(|(k, _)| *k != CENTRAL_CELL).map(|(_, &c)| (c as f64 - 100.0).powi(2) / 100.0).sum();
        assert!(chi2 < 24.3, "{counts:?}");
        let a = design_3x3(&cfg, 2).unwrap();
        let b = design_3x3(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.obs, design_3x3(&cfg, 3).unwrap().obs);
        for (t, area) in a.areal_truth.iter().zip(&a.areas) {
            let m = area.cells.iter().map(|&c| a.grid_y[c]).sum::<f64>() / area.cells.len() as f64;
            assert_eq!(*t, m);
        }
    }

    #[test]
    fn grid_and_partition() {
        let d = Domain::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let g = regular_grid(&d, 70);
        assert_eq!(g.len(), 4900);
        assert!((g[0][0] + 1.0 - 1.0 / 70.0).abs() < 1e-15);
        assert_eq!(g[1][1], g[0][1]);
        let areas = partition_areas(&d, &g);
        assert_eq!(areas.iter().map(|a| a.cells.len()).sum::<usize>(), 4900);
        assert_eq!(partition_cell(&d, [0.0, 0.0]), CENTRAL_CELL);
        assert_eq!(partition_cell(&d, [1.0, 1.0]), 8);
    }
}
