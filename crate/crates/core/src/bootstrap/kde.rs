//! Gaussian kernel density estimate of the bootstrap null distribution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in the output density grid.
pub const KDE_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// 0.9·min(sd, IQR/1.34)·n^(−1/5).
    #[default]
    Silverman,
    /// Two-stage direct plug-in (Sheather–Jones).
    SheatherJones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub rule: BandwidthRule,
    /// Empirical (1 − level) quantile of the replicates.
    pub critical_value: f64,
    pub level: f64,
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let sigma = sd(x);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

/// Σᵢ Σⱼ φ⁽ʳ⁾((xᵢ − xⱼ)/g) for r = 4 or 6.
fn pair_sum(x: &[f64], g: f64, order: u32) -> f64 {
    let deriv = |u: f64| {
        let u2 = u * u;
        let poly = match order {
            4 => u2 * u2 - 6.0 * u2 + 3.0,
            _ => u2 * u2 * u2 - 15.0 * u2 * u2 + 45.0 * u2 - 15.0,
        };
        poly * phi(u)
    };
    let n = x.len();
    let mut acc = n as f64 * deriv(0.0);
    for i in 0..n {
        for j in i + 1..n {
            acc += 2.0 * deriv((x[i] - x[j]) / g);
        }
    }
    acc
}

pub fn sheather_jones_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let sigma = if iqr > 0.0 { sd(x).min(iqr / 1.349) } else { sd(x) };
    // normal-reference ψ₈, then ψ₆ and ψ₄ from kernel estimates
    let psi8 = 105.0 / (32.0 * PI.sqrt() * sigma.powi(9));
    let g1 = (30.0 / ((2.0 * PI).sqrt() * psi8 * n)).powf(1.0 / 9.0);
    let psi6 = pair_sum(x, g1, 6) / (n * n * g1.powi(7));
    let g2 = (-6.0 / ((2.0 * PI).sqrt() * psi6 * n)).powf(0.2);
    let psi4 = pair_sum(x, g2, 4) / (n * n * g2.powi(5));
    (1.0 / (2.0 * PI.sqrt() * psi4 * n)).powf(0.2)
}

/// Gaussian KDE of bootstrap replicates on [min − 5h, max + 5h].
pub fn kde_null(replicates: &[f64], rule: BandwidthRule, level: f64) -> Result<KdeCurve> {
    if replicates.len() < 2 {
        return Err(Error::Validation("KDE needs at least two replicates".into()));
    }
    if replicates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("KDE replicates must be finite".into()));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Numeric("replicate statistics have zero variance; no density to estimate".into()));
    }
    let h = match rule {
        BandwidthRule::Silverman => silverman_bandwidth(replicates),
        BandwidthRule::SheatherJones => sheather_jones_bandwidth(replicates),
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Numeric(format!("bandwidth selection failed (h = {h})")));
    }
    let (a, b) = (lo - 5.0 * h, hi + 5.0 * h);
    let step = (b - a) / (KDE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_POINTS).map(|k| a + step * k as f64).collect();
    let norm = 1.0 / (replicates.len() as f64 * h);
    let density = grid
        .iter()
        .map(|&x| norm * sorted.iter().map(|d| phi((x - d) / h)).sum::<f64>())
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
        rule,
        critical_value: quantile_sorted(&sorted, 1.0 - level),
        level,
    })
}
