//! Natural cubic spline interpolation.
//!
//! Knot values are reproduced exactly and the second derivative vanishes at
//! both end knots. Outside the knot range the spline continues linearly with
//! the end slopes, which is the natural extension of a zero-curvature end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalCubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    curvature: Vec<f64>,
    /// Antiderivative at each knot, measured from the first knot.
    cumulative: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn new(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n == 0 || n != values.len() {
            return Err(Error::Validation(format!(
                "spline needs matching non-empty knots/values (got {} and {})",
                n,
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("spline knots must be strictly increasing".into()));
        }
        if values.iter().chain(knots).any(|v| !v.is_finite()) {
            return Err(Error::Validation("spline knots and values must be finite".into()));
        }
        let mut curvature = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior unknowns M_1..M_{n-2}.
            let m = n - 2;
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                diag[k] = 2.0 * (h[i - 1] + h[i]);
                upper[k] = h[i];
                rhs[k] = 6.0
                    * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
            }
            for k in 1..m {
                let lower = h[k];
                let w = lower / diag[k - 1];
                diag[k] -= w * upper[k - 1];
                rhs[k] -= w * rhs[k - 1];
            }
            let mut sol = vec![0.0; m];
            sol[m - 1] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                sol[k] = (rhs[k] - upper[k] * sol[k + 1]) / diag[k];
            }
            curvature[1..=m].copy_from_slice(&sol);
        }
        let mut spline = Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            curvature,
            cumulative: vec![0.0; n],
        };
        for i in 1..n {
            spline.cumulative[i] = spline.cumulative[i - 1] + spline.piece_integral(i - 1, knots[i]);
        }
        Ok(spline)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n.saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(n.saturating_sub(2)),
        }
    }

    fn end_slope(&self, left: bool) -> f64 {
        let n = self.knots.len();
        if n < 2 {
            return 0.0;
        }
        if left {
            let h = self.knots[1] - self.knots[0];
            (self.values[1] - self.values[0]) / h - h * (2.0 * self.curvature[0] + self.curvature[1]) / 6.0
        } else {
            let h = self.knots[n - 1] - self.knots[n - 2];
            (self.values[n - 1] - self.values[n - 2]) / h
                + h * (self.curvature[n - 2] + 2.0 * self.curvature[n - 1]) / 6.0
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.values[0];
        }
        if x < self.knots[0] {
            return self.values[0] + self.end_slope(true) * (x - self.knots[0]);
        }
        if x > self.knots[n - 1] {
            return self.values[n - 1] + self.end_slope(false) * (x - self.knots[n - 1]);
        }
        let i = self.interval(x);
        if x == self.knots[i] {
            return self.values[i];
        }
        if x == self.knots[i + 1] {
            return self.values[i + 1];
        }
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - x) / h;
        let b = (x - self.knots[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.curvature[i] + (b * b * b - b) * self.curvature[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return 0.0;
        }
        if x <= self.knots[0] {
            return self.end_slope(true);
        }
        if x >= self.knots[n - 1] {
            return self.end_slope(false);
        }
        let i = self.interval(x);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - x) / h;
        let b = (x - self.knots[i]) / h;
        (self.values[i + 1] - self.values[i]) / h
            + ((1.0 - 3.0 * a * a) * self.curvature[i] + (3.0 * b * b - 1.0) * self.curvature[i + 1]) * h / 6.0
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n < 3 || x <= self.knots[0] || x >= self.knots[n - 1] {
            return 0.0;
        }
        let i = self.interval(x);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - x) / h;
        a * self.curvature[i] + (1.0 - a) * self.curvature[i + 1]
    }

    /// Integral of piece `i` from its left knot to `x` (inside the piece).
    fn piece_integral(&self, i: usize, x: f64) -> f64 {
        let h = self.knots[i + 1] - self.knots[i];
        let u = x - self.knots[i];
        let b = u / h;
        let a = 1.0 - b;
        let lin = self.values[i] * (u - u * u / (2.0 * h)) + self.values[i + 1] * u * u / (2.0 * h);
        let ia = h * (-0.25 - a.powi(4) / 4.0 + a * a / 2.0);
        let ib = h * (b.powi(4) / 4.0 - b * b / 2.0);
        lin + h * h / 6.0 * (self.curvature[i] * ia + self.curvature[i + 1] * ib)
    }

    /// Antiderivative measured from the first knot.
    fn antiderivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let x0 = self.knots[0];
        if n == 1 {
            return self.values[0] * (x - x0);
        }
        if x <= x0 {
            let dx = x - x0;
            return self.values[0] * dx + 0.5 * self.end_slope(true) * dx * dx;
        }
        let xn = self.knots[n - 1];
        if x >= xn {
            let dx = x - xn;
            return self.cumulative[n - 1] + self.values[n - 1] * dx + 0.5 * self.end_slope(false) * dx * dx;
        }
        let i = self.interval(x);
        self.cumulative[i] + self.piece_integral(i, x)
    }

    /// Exact integral of the spline (with its linear extension) over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}
