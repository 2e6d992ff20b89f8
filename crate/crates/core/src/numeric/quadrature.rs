use serde::{Deserialize, Serialize};

/// Composite Simpson rule over `[a, b]` with `panels` subintervals (rounded up to even).
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let x = a + h * k as f64;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

/// Resolution policy for the composite Simpson rule.
///
/// Intervals are refined to `panels_per_unit` subintervals per unit of time,
/// never fewer than `min_panels`. On the unit-spaced observation grids used
/// throughout this crate that is one refinement per grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub panels_per_unit: usize,
    pub min_panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            panels_per_unit: 8,
            min_panels: 8,
        }
    }
}

impl Quadrature {
    pub fn panels_for(&self, a: f64, b: f64) -> usize {
        let len = (b - a).abs();
        let n = (len * self.panels_per_unit as f64).ceil() as usize;
        let n = n.max(self.min_panels).max(2);
        n + n % 2
    }

    /// Simpson nodes and weights on `[a, b]`.
    pub fn nodes(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.panels_for(a, b);
        let h = (b - a) / n as f64;
        let mut xs = Vec::with_capacity(n + 1);
        let mut ws = Vec::with_capacity(n + 1);
        for k in 0..=n {
            xs.push(if k == n { b } else { a + h * k as f64 });
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            ws.push(w * h / 3.0);
        }
        (xs, ws)
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        simpson(f, a, b, self.panels_for(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 2);
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (1.0 / 4.0 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(simpson(|x| x.exp(), 2.0, 2.0, 8), 0.0);
        assert_eq!(Quadrature::default().integrate(|x| x, 1.0, 1.0), 0.0);
    }

    #[test]
    fn refinement_scales_with_length() {
        let q = Quadrature::default();
        assert_eq!(q.panels_for(0.0, 1.0), 8);
        assert_eq!(q.panels_for(0.0, 3.0), 24);
        assert_eq!(q.panels_for(0.0, 0.1), 8);
        let (xs, ws) = q.nodes(0.0, 2.0);
        assert_eq!(xs.len(), 17);
        assert!((ws.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_integral_converges() {
        let v = Quadrature::default().integrate(|x| (-0.2 * x).exp(), 0.0, 5.0);
        let exact = (1.0 - (-1.0f64).exp()) / 0.2;
        assert!((v - exact).abs() < 5e-8);
    }
}
