//! Local polynomial regression with tricube weights (LOESS).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoessConfig {
    /// Fraction of the valid points used in each local fit, in (0, 1].
    pub span: f64,
    /// Local polynomial degree, 1 or 2.
    pub degree: usize,
    /// Bisquare reweighting passes after the initial fit.
    #[serde(default)]
    pub robustness_iters: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        Self {
            span: 0.5,
            degree: 2,
            robustness_iters: 2,
        }
    }
}

impl LoessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0 && self.span <= 1.0) {
            return Err(Error::Validation(format!("LOESS span must lie in (0, 1], got {}", self.span)));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::Validation(format!("LOESS degree must be 1 or 2, got {}", self.degree)));
        }
        Ok(())
    }
}

/// Smooth `y` against `t` and return fitted values at every `t`.
///
/// Missing points are left out of every local fit but still receive a
/// prediction. Windows always contain at least `degree + 2` valid points.
pub fn loess(t: &[f64], y: &[Option<f64>], cfg: &LoessConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if t.len() != y.len() {
        return Err(Error::Validation(format!("LOESS got {} times and {} values", t.len(), y.len())));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter_map(|(&x, v)| v.filter(|v| v.is_finite()).map(|v| (x, v)))
        .unzip();
    let nv = xs.len();
    if nv < cfg.degree + 2 {
        return Err(Error::Estimation(format!(
            "LOESS of degree {} needs at least {} valid points, got {nv}",
            cfg.degree,
            cfg.degree + 2
        )));
    }
    let q = ((cfg.span * nv as f64).floor() as usize).clamp(cfg.degree + 2, nv);
    let mut robust = vec![1.0; nv];
    let mut fitted_valid = vec![0.0; nv];
    for pass in 0..=cfg.robustness_iters {
        for (i, &x0) in xs.iter().enumerate() {
            fitted_valid[i] = local_fit(&xs, &ys, &robust, x0, q, cfg.degree);
        }
        if pass == cfg.robustness_iters {
            break;
        }
        let mut abs_res: Vec<f64> = ys.iter().zip(&fitted_valid).map(|(y, f)| (y - f).abs()).collect();
        let s = median(&mut abs_res);
        let level = ys.iter().map(|y| y.abs()).sum::<f64>() / nv as f64;
        // residuals at rounding level: the fit is already exact
        if !(s > 1e-10 * level.max(f64::MIN_POSITIVE)) {
            break;
        }
        for (k, w) in robust.iter_mut().enumerate() {
            let u = (ys[k] - fitted_valid[k]) / (6.0 * s);
            *w = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        }
    }
    Ok(t.iter().map(|&x0| local_fit(&xs, &ys, &robust, x0, q, cfg.degree)).collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn local_fit(xs: &[f64], ys: &[f64], robust: &[f64], x0: f64, q: usize, degree: usize) -> f64 {
    let mut dist: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    dist.sort_by(|a, b| a.total_cmp(b));
    // the q-th neighbour sits on the window edge with zero weight; widen past
    // ties until degree + 1 points carry weight
    let mut k = q - 1;
    let mut h = dist[k];
    while dist.iter().filter(|d| **d < h).count() < degree + 1 {
        if k + 1 < dist.len() {
            k += 1;
            h = dist[k];
        } else {
            h = dist[k] * (1.0 + 1e-6) + f64::MIN_POSITIVE;
            break;
        }
    }
    for deg in (0..=degree).rev() {
        let dim = deg + 1;
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for k in 0..xs.len() {
            let u = (xs[k] - x0) / h;
            if u.abs() >= 1.0 {
                continue;
            }
            let w = (1.0 - u.abs().powi(3)).powi(3) * robust[k];
            if w == 0.0 {
                continue;
            }
            let basis = [1.0, u, u * u];
            for r in 0..dim {
                b[r] += w * basis[r] * ys[k];
                for c in 0..dim {
                    a[r][c] += w * basis[r] * basis[c];
                }
            }
        }
        if let Some(sol) = solve(&mut a, &mut b, dim) {
            return sol;
        }
    }
    // every weight vanished; fall back to the nearest valid point
    let k = (0..xs.len())
        .min_by(|&i, &j| (xs[i] - x0).abs().total_cmp(&(xs[j] - x0).abs()))
        .unwrap_or(0);
    ys[k]
}

/// Gaussian elimination with partial pivoting; returns the intercept.
fn solve(a: &mut [[f64; 3]; 3], b: &mut [f64; 3], dim: usize) -> Option<f64> {
    let scale = (0..dim).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    for col in 0..dim {
        let piv = (col..dim).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..dim {
            let f = a[r][col] / a[col][col];
            for c in col..dim {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..dim).rev() {
        let mut s = b[r];
        for c in r + 1..dim {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x[0])
}
