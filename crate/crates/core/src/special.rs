//! Bessel K₁, the ν = 1 Matérn correlation, mixture covariances and the
//! distance density for two uniform points on a disk.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel function of the second kind, order one.
pub fn bessel_k1(x: f64) -> Result<f64> {
    if !(x > 0.0) || x.is_nan() {
        return Err(invalid!("bessel_k1 requires x > 0, got {x}"));
    }
    Ok(k1_unchecked(x))
}

pub(crate) fn k1_unchecked(x: f64) -> f64 {
    if x <= 2.0 {
        k1_series(x)
    } else {
        k1_continued_fraction(x)
    }
}

fn k1_series(x: f64) -> f64 {
    let y = 0.25 * x * x;
    let mut term = 1.0;
    // psi(k+1) + psi(k+2) with psi(1) = -gamma.
    let mut psi_sum = -2.0 * EULER_GAMMA + 1.0;
    let mut harmonic = 0.0;
    let mut sum_i = 0.0;
    let mut sum_k = 0.0;
    for k in 0..60 {
        sum_i += term;
        sum_k += psi_sum * term;
        let kf = k as f64;
        term *= y / ((kf + 1.0) * (kf + 2.0));
        harmonic += 1.0 / (kf + 1.0);
        psi_sum = -2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 2.0);
        if term < 1e-18 * sum_i {
            sum_i += term;
            sum_k += psi_sum * term;
            break;
        }
    }
    1.0 / x + (0.5 * x).ln() * (0.5 * x) * sum_i - 0.25 * x * sum_k
}

/// Steed's continued fraction for K₀, with K₁ from the Wronskian-type ratio.
fn k1_continued_fraction(x: f64) -> f64 {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    k0 * (x + 0.5 - h) / x
}

/// Matérn correlation with smoothness one, parameterized by effective range.
pub fn matern1_corr(d: f64, rho: f64) -> f64 {
    debug_assert!(d >= 0.0 && rho > 0.0);
    let x = 8f64.sqrt() * d / rho;
    if x <= 0.0 {
        1.0
    } else if x > 740.0 {
        0.0
    } else {
        x * k1_unchecked(x)
    }
}

/// One Matérn ν = 1 component of a mixture covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternComponent {
    pub weight: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovModel {
    pub components: Vec<MaternComponent>,
    #[serde(default)]
    pub nugget: Option<f64>,
}

impl CovModel {
    pub fn new(components: Vec<MaternComponent>, nugget: Option<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid!("covariance model needs at least one component"));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.rho > 0.0) {
                return Err(invalid!("component weight and range must be positive"));
            }
        }
        if nugget.is_some_and(|v| !(v >= 0.0)) {
            return Err(invalid!("nugget must be non-negative"));
        }
        Ok(CovModel { components, nugget })
    }

    /// The two-scale mixture used throughout the simulation study.
    pub fn two_scale_mixture() -> Self {
        CovModel {
            components: vec![
                MaternComponent { weight: 0.5, rho: 0.08 },
                MaternComponent { weight: 0.5, rho: 0.8 },
            ],
            nugget: None,
        }
    }

    pub fn total_variance(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Covariance at distance `d`; the nugget contributes only at `d == 0`.
    pub fn cov(&self, d: f64) -> f64 {
        let smooth: f64 = self.components.iter().map(|c| c.weight * matern1_corr(d, c.rho)).sum();
        match self.nugget {
            Some(n) if d == 0.0 => smooth + n,
            _ => smooth,
        }
    }

    /// Correlation of the smooth part.
    pub fn corr(&self, d: f64) -> f64 {
        let smooth: f64 = self.components.iter().map(|c| c.weight * matern1_corr(d, c.rho)).sum();
        smooth / self.total_variance()
    }
}

pub fn mixture_cov(model: &CovModel, d: f64) -> f64 {
    model.cov(d)
}

/// Density of the distance between two independent uniform points on a disk of radius `r`.
pub fn disk_distance_density(d: f64, r: f64) -> f64 {
    if !(0.0..=2.0 * r).contains(&d) {
        return 0.0;
    }
    let u = d / (2.0 * r);
    4.0 * d / (PI * r * r) * (u.acos() - u * (1.0 - u * u).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// K₁(x) = ∫₀^∞ exp(−x cosh t) cosh t dt, trapezoid rule (spectrally accurate here).
    fn k1_quadrature(x: f64) -> f64 {
        let h = 1e-3;
        let mut s = 0.5 * (-x).exp();
        let mut t: f64 = h;
        loop {
            let v = (-x * t.cosh()).exp() * t.cosh();
            s += v;
            if v < 1e-300 || t > 40.0 {
                break;
            }
            t += h;
        }
        s * h
    }

    #[test]
    fn k1_reference_values() {
        // Frozen from an independent 50-digit evaluation.
        assert!((bessel_k1(1.0).unwrap() - 0.601_907_230_197_234_6).abs() < 1e-12);
        assert!((bessel_k1(10.0).unwrap() / 1.864_877_345_382_558_5e-5 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn k1_against_quadrature_across_crossover() {
        for &x in &[0.05, 0.3, 1.0, 1.7, 1.999, 2.0, 2.001, 2.5, 4.0, 7.5, 15.0, 30.0] {
            let q = k1_quadrature(x);
            let k = bessel_k1(x).unwrap();
            assert!((k / q - 1.0).abs() < 1e-10, "x={x}: {k} vs {q}");
        }
    }

    #[test]
    fn k1_small_argument_limit() {
        let x = 1e-6;
        assert!((x * bessel_k1(x).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k1_rejects_non_positive() {
        assert!(bessel_k1(0.0).is_err());
        assert!(bessel_k1(-1.0).is_err());
    }

    #[test]
    fn k1_positive_and_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..2000 {
            let v = bessel_k1(i as f64 * 0.01).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern1_corr(0.0, 0.3), 1.0);
        let at_range = matern1_corr(0.7, 0.7);
        assert!((at_range - 0.139_667_474_015_293_1).abs() < 1e-12, "{at_range}");
        assert!(matern1_corr(5.0, 1.0) < 1e-4);
    }

    #[test]
    fn mixture_values() {
        let m = CovModel::two_scale_mixture();
        assert_eq!(m.cov(0.0), 1.0);
        assert!(matern1_corr(0.8, 0.08) < 1e-10);
        assert!((m.cov(0.8) - 0.5 * matern1_corr(0.8, 0.8)).abs() < 1e-10);
        let single = CovModel::new(vec![MaternComponent { weight: 2.0, rho: 0.4 }], Some(0.1)).unwrap();
        assert!((single.cov(0.3) - 2.0 * matern1_corr(0.3, 0.4)).abs() < 1e-15);
        assert!((single.cov(0.0) - 2.1).abs() < 1e-15);
    }

    #[test]
    fn disk_density_zeros() {
        assert_eq!(disk_distance_density(0.0, 1.0), 0.0);
        assert!(disk_distance_density(2.0, 1.0).abs() < 1e-15);
        assert_eq!(disk_distance_density(2.5, 1.0), 0.0);
    }
}
