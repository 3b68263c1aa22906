//! Natural cubic interpolating splines.

use crate::error::{argument, Result};

/// Natural cubic spline through a strictly increasing set of knots.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn fit(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(argument(format!("spline needs >= 2 knots with matching values ({n} knots, {} values)", values.len())));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(argument("spline knots must be strictly increasing"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let k = n - 2;
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                upper[i] = h[i + 1];
                rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h[i + 1] - (values[i + 1] - values[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self { knots: knots.to_vec(), values: values.to_vec(), m })
    }

    /// Evaluates the spline; outside the knot range it continues linearly.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let (k, y, m) = (&self.knots, &self.values, &self.m);
        if x <= k[0] {
            let h = k[1] - k[0];
            let slope = (y[1] - y[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0;
            return y[0] + slope * (x - k[0]);
        }
        if x >= k[n - 1] {
            let h = k[n - 1] - k[n - 2];
            let slope = (y[n - 1] - y[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
            return y[n - 1] + slope * (x - k[n - 1]);
        }
        let i = match k.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return y[i],
            Err(i) => i - 1,
        };
        let h = k[i + 1] - k[i];
        let a = (k[i + 1] - x) / h;
        let b = (x - k[i]) / h;
        a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interpolates_knots() {
        let k = [0.0, 1.0, 2.5, 3.0, 5.0];
        let v = [1.0, -2.0, 0.5, 4.0, 3.0];
        let s = NaturalCubicSpline::fit(&k, &v).unwrap();
        for (x, y) in k.iter().zip(v) {
            assert_eq!(s.eval(*x), y);
        }
    }

    #[test]
    fn reproduces_linear_functions() {
        let k = [0.0, 0.3, 0.7, 1.0];
        let v: Vec<f64> = k.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = NaturalCubicSpline::fit(&k, &v).unwrap();
        for x in [0.1, 0.5, 0.95, 1.5, -0.2] {
            assert_relative_eq!(s.eval(x), 2.0 * x - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_knots_is_linear() {
        let s = NaturalCubicSpline::fit(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_relative_eq!(s.eval(1.0), 2.0);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(NaturalCubicSpline::fit(&[0.0], &[1.0]).is_err());
        assert!(NaturalCubicSpline::fit(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn smooth_function_approximated() {
        let k: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let v: Vec<f64> = k.iter().map(|x| (3.0 * x).sin()).collect();
        let s = NaturalCubicSpline::fit(&k, &v).unwrap();
        for i in 0..100 {
            let x = 0.05 + 0.9 * i as f64 / 100.0;
            assert!((s.eval(x) - (3.0 * x).sin()).abs() < 1e-4);
        }
    }
}
