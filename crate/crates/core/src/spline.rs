//! Monotone piecewise-cubic Hermite interpolation with Hyman-filtered slopes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneSpline {
    /// Interpolates `(xs, ys)`; `xs` strictly increasing, `ys` monotone.
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() || n < 2 {
            return Err(invalid!("monotone spline needs at least two (x, y) pairs of equal length"));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(invalid!("monotone spline data must be finite"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid!("spline abscissae must be strictly increasing"));
        }
        let inc = ys.windows(2).all(|w| w[1] >= w[0]);
        let dec = ys.windows(2).all(|w| w[1] <= w[0]);
        if !inc && !dec {
            return Err(invalid!("spline ordinates must be monotone"));
        }

        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let secant: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        // Three-point slope estimates.
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = secant[0];
            slopes[1] = secant[0];
        } else {
            slopes[0] = ((2.0 * h[0] + h[1]) * secant[0] - h[0] * secant[1]) / (h[0] + h[1]);
            for i in 1..n - 1 {
                slopes[i] = (h[i] * secant[i - 1] + h[i - 1] * secant[i]) / (h[i - 1] + h[i]);
            }
            let (a, b) = (h[n - 2], h[n - 3]);
            slopes[n - 1] = ((2.0 * a + b) * secant[n - 2] - a * secant[n - 3]) / (a + b);
        }

        // Hyman filter.
        for i in 0..n {
            let left = if i > 0 { Some(secant[i - 1]) } else { None };
            let right = if i < n - 1 { Some(secant[i]) } else { None };
            let bound = match (left, right) {
                (Some(l), Some(r)) if l * r > 0.0 => Some((l.signum(), 3.0 * l.abs().min(r.abs()))),
                (Some(_), Some(_)) => None,
                (Some(s), None) | (None, Some(s)) => Some((s.signum(), 3.0 * s.abs())),
                (None, None) => unreachable!(),
            };
            slopes[i] = match bound {
                Some((sign, cap)) if sign != 0.0 => sign * (sign * slopes[i]).max(0.0).min(cap),
                _ => 0.0,
            };
        }

        Ok(MonotoneSpline { xs: xs.to_vec(), ys: ys.to_vec(), slopes })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// Evaluates the interpolant; outside the knots it continues linearly with the end slope.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_data_is_reproduced() {
        let xs = [0.0, 0.5, 2.0, 3.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = MonotoneSpline::new(&xs, &ys).unwrap();
        for i in 0..=100 {
            let x = -1.0 + 0.09 * i as f64;
            assert!((s.eval(x) - (2.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_monotone() {
        assert!(MonotoneSpline::new(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.5]).is_err());
        assert!(MonotoneSpline::new(&[0.0, 0.0, 2.0], &[0.0, 1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn interpolates_and_brackets(
            steps in proptest::collection::vec((0.01f64..2.0, 0.0f64..5.0), 2..12),
            decreasing in any::<bool>(),
        ) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (dx, dy) in &steps {
                xs.push(xs.last().unwrap() + dx);
                ys.push(ys.last().unwrap() + if decreasing { -dy } else { *dy });
            }
            let s = MonotoneSpline::new(&xs, &ys).unwrap();
            for i in 0..xs.len() {
                prop_assert!((s.eval(xs[i]) - ys[i]).abs() <= 1e-14 * (1.0 + ys[i].abs()));
            }
            for i in 0..xs.len() - 1 {
                let (lo, hi) = if ys[i] <= ys[i + 1] { (ys[i], ys[i + 1]) } else { (ys[i + 1], ys[i]) };
                for k in 1..20 {
                    let x = xs[i] + (xs[i + 1] - xs[i]) * k as f64 / 20.0;
                    let v = s.eval(x);
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
