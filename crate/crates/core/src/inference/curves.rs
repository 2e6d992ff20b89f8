//! Sample moment curves and finite-difference derivatives.

use crate::error::{Error, Result};
use crate::model::MomentCurves;
use crate::simulate::PathPanel;

/// Second-order finite differences on a possibly non-uniform grid.
///
/// Three-point central stencils inside, three-point one-sided stencils at
/// both ends. Exact for polynomials of degree two.
pub fn numeric_derivative(grid: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    if n < 3 {
        return Err(Error::Validation(format!("numeric derivative needs at least 3 points, got {n}")));
    }
    if values.len() != n {
        return Err(Error::Validation(format!("{} values for a {n}-point grid", values.len())));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("derivative grid must be strictly increasing".into()));
    }
    let f = values;
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        let (h1, h2) = (grid[j] - grid[j - 1], grid[j + 1] - grid[j]);
        out[j] = -h2 / (h1 * (h1 + h2)) * f[j - 1] + (h2 - h1) / (h1 * h2) * f[j] + h1 / (h2 * (h1 + h2)) * f[j + 1];
    }
    let (h1, h2) = (grid[1] - grid[0], grid[2] - grid[1]);
    out[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1] - h1 / (h2 * (h1 + h2)) * f[2];
    let (h1, h2) = (grid[n - 1] - grid[n - 2], grid[n - 2] - grid[n - 3]);
    out[n - 1] = (2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[n - 1] - (h1 + h2) / (h1 * h2) * f[n - 2]
        + h1 / (h2 * (h1 + h2)) * f[n - 3];
    Ok(out)
}

/// m̂₁ (mean of logs), m̂₂ (log of mean), û (unbiased variance of logs) and
/// their numeric derivatives.
pub fn sample_moment_curves(panel: &PathPanel) -> Result<MomentCurves> {
    let d = panel.n_subjects();
    if d < 2 {
        return Err(Error::Validation(format!("moment curves need at least 2 subjects, got {d}")));
    }
    let n = panel.n_times();
    let (mut m1, mut m2, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for j in 0..n {
        let col = panel.column(j);
        let logs: Vec<f64> = col.iter().map(|x| x.ln()).collect();
        let mean_log = logs.iter().sum::<f64>() / d as f64;
        let var_log = logs.iter().map(|y| (y - mean_log).powi(2)).sum::<f64>() / (d - 1) as f64;
        m1.push(mean_log);
        m2.push((col.iter().sum::<f64>() / d as f64).ln());
        u.push(var_log);
    }
    curves_from_values(panel.grid(), m1, m2, u)
}

/// Attach numeric derivatives to sampled m₁, m₂, u.
pub fn curves_from_values(grid: &[f64], m1: Vec<f64>, m2: Vec<f64>, u: Vec<f64>) -> Result<MomentCurves> {
    let dm1 = numeric_derivative(grid, &m1)?;
    let dm2 = numeric_derivative(grid, &m2)?;
    let du = numeric_derivative(grid, &u)?;
    let curves = MomentCurves {
        grid: grid.to_vec(),
        m1,
        m2,
        u,
        dm1,
        dm2,
        du,
    };
    curves.validate()?;
    Ok(curves)
}
