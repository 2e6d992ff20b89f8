use serde::{Deserialize, Serialize};

use super::{ModelParams, ProfileSet, StudyDesign, TherapyProfile};
use crate::error::{Error, Result};
use crate::numeric::Quadrature;

/// k̄(t|τ) = exp(−∫_τ^t (β − D(s)) ds).
pub fn integrating_factor(t: f64, tau: f64, beta: f64, d: &TherapyProfile, quad: &Quadrature) -> Result<f64> {
    if tau > t {
        return Err(Error::Domain(format!("integrating factor needs tau <= t (tau={tau}, t={t})")));
    }
    let v = (-(beta * (t - tau)) + d.integral(tau, t, quad)).exp();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("integrating factor not finite on [{tau}, {t}]")));
    }
    Ok(v)
}

/// ∫₀ᴸ xˡ e^{−a x} dx, stable for small `a·L`.
pub(crate) fn exp_power_integral(l: u32, a: f64, len: f64) -> f64 {
    let z = a * len;
    if z.abs() < 1.0 {
        // series in (−a x)^k / k!
        let mut sum = 0.0;
        let mut coef = 1.0;
        for k in 0..40u32 {
            let term = coef * len.powi((l + k + 1) as i32) / (l + k + 1) as f64;
            sum += term;
            coef *= -a / (k + 1) as f64;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        // l!/a^{l+1} [1 − e^{−z} Σ_{k≤l} z^k/k!]
        let mut partial = 0.0;
        let mut term = 1.0;
        let mut fact = 1.0;
        for k in 0..=l {
            if k > 0 {
                term *= z / k as f64;
                fact *= k as f64;
            }
            partial += term;
        }
        fact / a.powi((l + 1) as i32) * (1.0 - (-z).exp() * partial)
    }
}

/// Per-interval quantities of the transition law over `[s, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionTerms {
    /// k̄(t|s)
    pub kbar: f64,
    /// θ(t|s) = ∫_s^t (α − C − σ²V/2) k̄(t|r) dr
    pub theta: f64,
    /// Ω(t|s) = ∫_s^t k̄²(t|r) V(r) dr
    pub omega: f64,
}

pub fn transition_terms(
    params: &ModelParams,
    profiles: &ProfileSet,
    s: f64,
    t: f64,
    quad: &Quadrature,
) -> Result<TransitionTerms> {
    if !(t >= s) {
        return Err(Error::Domain(format!("transition needs s <= t (s={s}, t={t})")));
    }
    let s2 = params.sigma2();
    let len = t - s;
    let terms = if let (Some(c), Some(d), Some(v)) = (
        profiles.c.constant_value(),
        profiles.d.constant_value(),
        profiles.v.constant_value(),
    ) {
        let lambda = params.beta - d;
        TransitionTerms {
            kbar: (-lambda * len).exp(),
            theta: (params.alpha - c - 0.5 * s2 * v) * exp_power_integral(0, lambda, len),
            omega: v * exp_power_integral(0, 2.0 * lambda, len),
        }
    } else {
        let (nodes, weights) = quad.nodes(s, t);
        let mut theta = 0.0;
        let mut omega = 0.0;
        for (&r, &w) in nodes.iter().zip(&weights) {
            let k = integrating_factor(t, r, params.beta, &profiles.d, quad)?;
            let v = profiles.v.value(r);
            theta += w * (params.alpha - profiles.c.value(r) - 0.5 * s2 * v) * k;
            omega += w * k * k * v;
        }
        TransitionTerms {
            kbar: integrating_factor(t, s, params.beta, &profiles.d, quad)?,
            theta,
            omega,
        }
    };
    if !(terms.theta.is_finite() && terms.omega.is_finite() && terms.kbar.is_finite()) {
        return Err(Error::Numeric(format!("transition quadrature failed on [{s}, {t}]")));
    }
    Ok(terms)
}

/// Parameters of a lognormal law: X = exp(N(mean, variance)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalLaw {
    pub mean: f64,
    pub variance: f64,
}

impl LogNormalLaw {
    pub fn log_density(&self, x: f64) -> f64 {
        let z = x.ln() - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - x.ln() - z * z / (2.0 * self.variance)
    }
}

/// Law of X(t) given X(s) = y.
pub fn transition_law(
    params: &ModelParams,
    profiles: &ProfileSet,
    t: f64,
    s: f64,
    y: f64,
    quad: &Quadrature,
) -> Result<LogNormalLaw> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("conditioning state must be positive, got {y}")));
    }
    if !(s < t) {
        return Err(Error::Domain(format!("transition law needs s < t (s={s}, t={t})")));
    }
    let tt = transition_terms(params, profiles, s, t, quad)?;
    Ok(LogNormalLaw {
        mean: tt.kbar * y.ln() + tt.theta,
        variance: params.sigma2() * tt.omega,
    })
}

/// m₁ = E[ln X], m₂ = ln E[X], u = Var[ln X] and their time derivatives on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurves {
    pub grid: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub u: Vec<f64>,
    pub dm1: Vec<f64>,
    pub dm2: Vec<f64>,
    pub du: Vec<f64>,
}

impl MomentCurves {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Grid indices where m₂ < m₁ (beyond rounding), which Jensen's inequality forbids.
    pub fn jensen_violations(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.m1[j].is_finite() && self.m2[j].is_finite())
            .filter(|&j| self.m2[j] < self.m1[j] - 1e-12 * (1.0 + self.m1[j].abs()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if [&self.m1, &self.m2, &self.u, &self.dm1, &self.dm2, &self.du]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(Error::Validation("moment curves have mismatched lengths".into()));
        }
        if let Some(u) = self.u.iter().find(|u| **u < 0.0) {
            return Err(Error::Validation(format!("negative log-variance {u}")));
        }
        Ok(())
    }
}

/// Exact moment curves of the model with analytic derivatives.
pub fn theoretical_moments(
    params: &ModelParams,
    profiles: &ProfileSet,
    design: &StudyDesign,
    quad: &Quadrature,
) -> Result<MomentCurves> {
    let grid = design.grid().to_vec();
    let n = grid.len();
    let s2 = params.sigma2();
    let mut m1 = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    m1.push(design.x0().ln());
    u.push(0.0);
    for j in 1..n {
        let tt = transition_terms(params, profiles, grid[j - 1], grid[j], quad)?;
        m1.push(tt.kbar * m1[j - 1] + tt.theta);
        u.push(tt.kbar * tt.kbar * u[j - 1] + s2 * tt.omega);
    }
    let m2: Vec<f64> = m1.iter().zip(&u).map(|(a, b)| a + 0.5 * b).collect();
    let mut dm1 = Vec::with_capacity(n);
    let mut du = Vec::with_capacity(n);
    for j in 0..n {
        let t = grid[j];
        let (c, d, v) = (profiles.c.value(t), profiles.d.value(t), profiles.v.value(t));
        let rate = params.beta - d;
        dm1.push(params.alpha - c - 0.5 * s2 * v - rate * m1[j]);
        du.push(s2 * v - 2.0 * rate * u[j]);
    }
    let dm2 = dm1.iter().zip(&du).map(|(a, b)| a + 0.5 * b).collect();
    Ok(MomentCurves { grid, m1, m2, u, dm1, dm2, du })
}

/// E[X(t)] and Var[X(t)] from the log-moment curves.
pub fn mean_variance_x(curves: &MomentCurves) -> (Vec<f64>, Vec<f64>) {
    curves
        .m1
        .iter()
        .zip(&curves.u)
        .map(|(&m, &u)| ((m + 0.5 * u).exp(), (2.0 * m + u).exp() * u.exp_m1()))
        .unzip()
}
