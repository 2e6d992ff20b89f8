//! Exact-transition likelihood and its estimating equations.
//!
//! All quantities are built from the weighted integrals
//!
//! ```text
//! Ψ^{l,m,p,q}(s, t) = ∫_s^t (t − r)^l C(r)^m V(r)^p k̄(t|r)^q dr
//! ```
//!
//! which satisfy ∂Ψ^{l,m,p,q}/∂β = −q Ψ^{l+1,m,p,q}.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::moments::exp_power_integral;
use crate::model::{integrating_factor, ModelParams, ProfileSet, Role, TherapyProfile};
use crate::numeric::roots::geometric_grid;
use crate::numeric::{brent_root, find_brackets, Quadrature, RootOptions};
use crate::simulate::PathPanel;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITER: usize = 200;
const RESIDUAL_TOL: f64 = 1e-8;

/// One observed transition `X(s) = from → X(t) = to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: f64,
    pub t: f64,
    pub from: f64,
    pub to: f64,
}

/// Anything that can be read as a set of independent paths of transitions.
pub trait TransitionSource {
    fn transitions(&self) -> Vec<Transition>;
}

impl TransitionSource for PathPanel {
    fn transitions(&self) -> Vec<Transition> {
        let grid = self.grid();
        self.values()
            .iter()
            .flat_map(|row| {
                (1..row.len()).map(move |j| Transition {
                    s: grid[j - 1],
                    t: grid[j],
                    from: row[j - 1],
                    to: row[j],
                })
            })
            .collect()
    }
}

/// Paths observed at subject-specific times (each path starts at the shared t₀, x₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularSample {
    paths: Vec<(Vec<f64>, Vec<f64>)>,
}

impl IrregularSample {
    pub fn new(paths: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Validation("sample has no paths".into()));
        }
        let (t0, x0) = (paths[0].0.first().copied(), paths[0].1.first().copied());
        for (i, (times, values)) in paths.iter().enumerate() {
            if times.len() != values.len() || times.len() < 2 {
                return Err(Error::Validation(format!("path {} needs matching times/values, at least 2", i + 1)));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Validation(format!("path {} times are not increasing", i + 1)));
            }
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Validation(format!("path {} has a non-positive value", i + 1)));
            }
            if times.first().copied() != t0 || values.first().copied() != x0 {
                return Err(Error::Validation(format!("path {} does not start at the shared (t0, x0)", i + 1)));
            }
        }
        Ok(Self { paths })
    }
}

impl TransitionSource for IrregularSample {
    fn transitions(&self) -> Vec<Transition> {
        self.paths
            .iter()
            .flat_map(|(times, values)| {
                (1..times.len()).map(move |j| Transition {
                    s: times[j - 1],
                    t: times[j],
                    from: values[j - 1],
                    to: values[j],
                })
            })
            .collect()
    }
}

/// Ψ^{l,m,p,q} over `[s, t]` for arbitrary small indices.
#[allow(clippy::too_many_arguments)]
pub fn psi_integral(
    s: f64,
    t: f64,
    (l, m, p, q): (u32, u32, u32, u32),
    beta: f64,
    profiles: &ProfileSet,
    quad: &Quadrature,
) -> Result<f64> {
    if !(t > s) {
        return Err(Error::Domain(format!("Ψ integral needs s < t (s={s}, t={t})")));
    }
    if let (Some(c), Some(d), Some(v)) = (
        profiles.c.constant_value(),
        profiles.d.constant_value(),
        profiles.v.constant_value(),
    ) {
        let scale = c.powi(m as i32) * v.powi(p as i32);
        if scale == 0.0 {
            return Ok(0.0);
        }
        return Ok(scale * exp_power_integral(l, q as f64 * (beta - d), t - s));
    }
    let (nodes, weights) = quad.nodes(s, t);
    let mut acc = 0.0;
    for (&r, &w) in nodes.iter().zip(&weights) {
        let k = integrating_factor(t, r, beta, &profiles.d, quad)?;
        acc += w
            * (t - r).powi(l as i32)
            * profiles.c.value(r).powi(m as i32)
            * profiles.v.value(r).powi(p as i32)
            * k.powi(q as i32);
    }
    if !acc.is_finite() {
        return Err(Error::Numeric(format!("Ψ quadrature failed on [{s}, {t}]")));
    }
    Ok(acc)
}

/// The Ψ values one transition interval needs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalPsi {
    pub kbar: f64,
    pub p0001: f64,
    pub p0101: f64,
    pub p0011: f64,
    pub p0012: f64,
    pub p1012: f64,
    pub p1001: f64,
    pub p1101: f64,
    pub p1011: f64,
}

fn interval_psi(s: f64, t: f64, beta: f64, profiles: &ProfileSet, quad: &Quadrature) -> Result<IntervalPsi> {
    if !(t > s) {
        return Err(Error::Domain(format!("transition interval must have s < t (s={s}, t={t})")));
    }
    let len = t - s;
    let out = if let (Some(c), Some(d), Some(v)) = (
        profiles.c.constant_value(),
        profiles.d.constant_value(),
        profiles.v.constant_value(),
    ) {
        let lam = beta - d;
        let e01 = exp_power_integral(0, lam, len);
        let e11 = exp_power_integral(1, lam, len);
        IntervalPsi {
            kbar: (-lam * len).exp(),
            p0001: e01,
            p0101: c * e01,
            p0011: v * e01,
            p0012: v * exp_power_integral(0, 2.0 * lam, len),
            p1012: v * exp_power_integral(1, 2.0 * lam, len),
            p1001: e11,
            p1101: c * e11,
            p1011: v * e11,
        }
    } else {
        let (nodes, weights) = quad.nodes(s, t);
        let mut o = IntervalPsi {
            kbar: integrating_factor(t, s, beta, &profiles.d, quad)?,
            ..Default::default()
        };
        for (&r, &w) in nodes.iter().zip(&weights) {
            let k = integrating_factor(t, r, beta, &profiles.d, quad)?;
            let (c, v, x) = (profiles.c.value(r), profiles.v.value(r), t - r);
            o.p0001 += w * k;
            o.p0101 += w * c * k;
            o.p0011 += w * v * k;
            o.p0012 += w * v * k * k;
            o.p1012 += w * x * v * k * k;
            o.p1001 += w * x * k;
            o.p1101 += w * x * c * k;
            o.p1011 += w * x * v * k;
        }
        o
    };
    if !(out.p0012 > 0.0) || !out.p0012.is_finite() {
        return Err(Error::Numeric(format!(
            "transition variance integral Ω = {} is not positive on [{s}, {t}]",
            out.p0012
        )));
    }
    Ok(out)
}

/// Sums entering the likelihood equations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// `x[k]` holds X_k for k = 1..=15 (index 0 unused).
    pub x: [f64; 16],
    pub z: f64,
    pub phi: f64,
    pub gamma: f64,
    pub upsilon: f64,
    pub n: usize,
    pub sum_log_x: f64,
}

/// Transitions sharing one interval, summarised by centered moments of
/// (ln from, ln to). Every likelihood sum is quadratic in these logs, so the
/// summary is exact and each β costs one pass over distinct intervals.
#[derive(Debug, Clone, Copy)]
struct IntervalGroup {
    s: f64,
    t: f64,
    n: f64,
    mean_from: f64,
    mean_to: f64,
    c_ff: f64,
    c_tt: f64,
    c_ft: f64,
}

impl IntervalGroup {
    /// Σ(δ − a)² for δ = ln to − k̄ ln from, written as n(δ̄ − a)² plus a centered part.
    fn sum_sq(&self, kbar: f64, a: f64) -> f64 {
        let dbar = self.mean_to - kbar * self.mean_from;
        self.n * (dbar - a).powi(2) + self.centered_dd(kbar)
    }

    fn centered_dd(&self, kbar: f64) -> f64 {
        (self.c_tt - 2.0 * kbar * self.c_ft + kbar * kbar * self.c_ff).max(0.0)
    }
}

fn group_transitions(trans: &[Transition]) -> Result<Vec<IntervalGroup>> {
    if trans.is_empty() {
        return Err(Error::Validation("no transitions to fit".into()));
    }
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut members: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut spans = Vec::new();
    for tr in trans {
        if !(tr.from > 0.0 && tr.to > 0.0) {
            return Err(Error::Domain(format!("non-positive state in transition at t={}", tr.t)));
        }
        if !(tr.t > tr.s) {
            return Err(Error::Domain(format!("transition interval must have s < t (s={}, t={})", tr.s, tr.t)));
        }
        let k = *index.entry((tr.s.to_bits(), tr.t.to_bits())).or_insert_with(|| {
            members.push(Vec::new());
            spans.push((tr.s, tr.t));
            members.len() - 1
        });
        members[k].push((tr.from.ln(), tr.to.ln()));
    }
    Ok(members
        .iter()
        .zip(spans)
        .map(|(m, (s, t))| {
            let n = m.len() as f64;
            let mf = m.iter().map(|p| p.0).sum::<f64>() / n;
            let mt = m.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut c_ff, mut c_tt, mut c_ft) = (0.0, 0.0, 0.0);
            for &(f, t) in m {
                c_ff += (f - mf) * (f - mf);
                c_tt += (t - mt) * (t - mt);
                c_ft += (f - mf) * (t - mt);
            }
            IntervalGroup {
                s,
                t,
                n,
                mean_from: mf,
                mean_to: mt,
                c_ff,
                c_tt,
                c_ft,
            }
        })
        .collect())
}

/// Per-β transition quantities with Ψ values computed once per distinct interval.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    beta: f64,
    n: usize,
    groups: Vec<(IntervalGroup, IntervalPsi)>,
}

impl LikelihoodWorkspace {
    pub fn new(
        data: &(impl TransitionSource + ?Sized),
        beta: f64,
        profiles: &ProfileSet,
        quad: &Quadrature,
    ) -> Result<Self> {
        Self::from_groups(&group_transitions(&data.transitions())?, beta, profiles, quad)
    }

    fn from_groups(groups: &[IntervalGroup], beta: f64, profiles: &ProfileSet, quad: &Quadrature) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Numeric(format!("non-finite death rate {beta}")));
        }
        let groups = groups
            .iter()
            .map(|g| Ok((*g, interval_psi(g.s, g.t, beta, profiles, quad)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            beta,
            n: groups.iter().map(|g| g.0.n as usize).sum(),
            groups,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn aggregates(&self, alpha: f64, sigma2: f64) -> Aggregates {
        let mut a = Aggregates {
            n: self.n,
            ..Default::default()
        };
        let x = &mut a.x;
        for (g, p) in &self.groups {
            let (n, k, om) = (g.n, p.kbar, p.p0012);
            let dt = g.t - g.s;
            let dbar = g.mean_to - k * g.mean_from;
            let sum_d = n * dbar;
            let sum_dd = n * dbar * dbar + g.centered_dd(k);
            let sum_d_from = n * dbar * g.mean_from + (g.c_ft - k * g.c_ff);
            let theta = alpha * p.p0001 - p.p0101 - 0.5 * sigma2 * p.p0011;
            let phi = -alpha * p.p1001 + p.p1101 + 0.5 * sigma2 * p.p1011;
            let sum_kdy = k * dt * n * g.mean_from;
            x[1] += n * p.p0001 * p.p0001 / om;
            x[2] += n * p.p0101 * p.p0001 / om;
            x[3] += n * p.p0011 * p.p0001 / om;
            x[4] += sum_d * p.p0001 / om;
            x[5] += sum_kdy * theta / om;
            x[6] += n * theta * phi / om;
            x[7] += n * theta * theta * p.p1012 / (om * om);
            x[8] += sum_dd * p.p1012 / (om * om);
            x[9] += k * dt * sum_d_from / om;
            x[10] += sum_d * p.p1012 * theta / (om * om);
            x[11] += sum_d * phi / om;
            x[12] += n * p.p1012 / om;
            x[13] += n * p.p0011 * p.p0011 / om;
            x[14] += n * p.p0101 * p.p0101 / om;
            x[15] += sum_d * p.p0101 / om;
            a.z += sum_dd / om;
            a.phi += n * theta * theta / om;
            a.gamma += sum_d * theta / om;
            a.upsilon += n * om.ln();
            a.sum_log_x += n * g.mean_to;
        }
        a
    }

    pub fn log_likelihood(&self, alpha: f64, sigma2: f64) -> f64 {
        let n = self.n as f64;
        let mut quad_form = 0.0;
        let mut upsilon = 0.0;
        let mut sum_log_x = 0.0;
        for (g, p) in &self.groups {
            let theta = alpha * p.p0001 - p.p0101 - 0.5 * sigma2 * p.p0011;
            quad_form += g.sum_sq(p.kbar, theta) / p.p0012;
            upsilon += g.n * p.p0012.ln();
            sum_log_x += g.n * g.mean_to;
        }
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * sigma2.ln() - quad_form / (2.0 * sigma2)
            - 0.5 * upsilon
            - sum_log_x
    }

    /// Growth rate solving the α-equation for given σ².
    pub fn alpha_given_sigma2(&self, sigma2: f64) -> Result<f64> {
        let (mut x1, mut x2, mut x3, mut x4) = (0.0, 0.0, 0.0, 0.0);
        for (g, p) in &self.groups {
            let w = p.p0001 / p.p0012;
            x1 += g.n * p.p0001 * w;
            x2 += g.n * p.p0101 * w;
            x3 += g.n * p.p0011 * w;
            x4 += g.n * (g.mean_to - p.kbar * g.mean_from) * w;
        }
        if !(x1 > 0.0) {
            return Err(Error::Estimation("degenerate design: X1 = 0".into()));
        }
        Ok((2.0 * x2 + sigma2 * x3 + 2.0 * x4) / (2.0 * x1))
    }

    /// Positive root of the σ²-equation for given α.
    pub fn sigma2_given_alpha(&self, alpha: f64) -> Result<f64> {
        let n = self.n as f64;
        // Q = Z + α²X1 − 2αX2 − 2αX4 + X14 + 2X15, kept as a sum of squares so
        // it stays non-negative when the fit is nearly exact
        let (mut q, mut x13) = (0.0, 0.0);
        for (g, p) in &self.groups {
            q += g.sum_sq(p.kbar, alpha * p.p0001 - p.p0101) / p.p0012;
            x13 += g.n * p.p0011 * p.p0011 / p.p0012;
        }
        if !(q > 0.0) {
            return Err(Error::Estimation(format!("σ² equation has no positive root (Q = {q})")));
        }
        // X13/4·s² + n·s − Q = 0, written to avoid cancellation
        Ok(2.0 * q / (n + (n * n + x13 * q).sqrt()))
    }

    /// Residuals of the α-, β- and σ²-equations, each divided by the sum of
    /// the absolute values of its terms.
    pub fn scaled_residuals(&self, alpha: f64, sigma2: f64) -> [f64; 3] {
        let a = self.aggregates(alpha, sigma2);
        let x = &a.x;
        let scaled = |terms: &[f64]| {
            let s: f64 = terms.iter().sum();
            let m: f64 = terms.iter().map(|t| t.abs()).sum();
            if m == 0.0 {
                0.0
            } else {
                s / m
            }
        };
        let q_terms = [
            -a.z,
            -alpha * alpha * x[1],
            2.0 * alpha * x[2],
            2.0 * alpha * x[4],
            -x[14],
            -2.0 * x[15],
        ];
        let mut sig: Vec<f64> = vec![sigma2 * sigma2 / 4.0 * x[13], a.n as f64 * sigma2];
        sig.extend(q_terms);
        [
            scaled(&[2.0 * alpha * x[1], -2.0 * x[2], -sigma2 * x[3], -2.0 * x[4]]),
            scaled(&beta_terms(&a, sigma2)),
            scaled(&sig),
        ]
    }

    /// Left side of the β-equation, equal to σ²·∂L/∂β.
    pub fn beta_residual(&self, alpha: f64, sigma2: f64) -> f64 {
        beta_terms(&self.aggregates(alpha, sigma2), sigma2).iter().sum()
    }

    /// Joint solution of the α- and σ²-equations at this β.
    pub fn profile_alpha_sigma2(&self) -> Result<(f64, f64)> {
        let mut alpha = self.alpha_given_sigma2(0.0)?;
        let mut sigma2 = self.sigma2_given_alpha(alpha)?;
        for _ in 0..FIXED_POINT_MAX_ITER {
            let a_new = self.alpha_given_sigma2(sigma2)?;
            let s_new = self.sigma2_given_alpha(a_new)?;
            let done = (a_new - alpha).abs() <= FIXED_POINT_TOL * (1.0 + alpha.abs())
                && (s_new - sigma2).abs() <= FIXED_POINT_TOL * sigma2;
            alpha = a_new;
            sigma2 = s_new;
            if done {
                return Ok((alpha, sigma2));
            }
        }
        Err(Error::Estimation(format!(
            "(α, σ²) fixed point did not converge at β = {}",
            self.beta
        )))
    }
}

/// X5 − X6 − X7 − X8 − X9 + 2X10 + X11 + σ²X12.
fn beta_terms(a: &Aggregates, sigma2: f64) -> [f64; 8] {
    let x = &a.x;
    [x[5], -x[6], -x[7], -x[8], -x[9], 2.0 * x[10], x[11], sigma2 * x[12]]
}

/// Log-likelihood of the observed transitions.
pub fn log_likelihood(
    data: &(impl TransitionSource + ?Sized),
    params: &ModelParams,
    profiles: &ProfileSet,
    quad: &Quadrature,
) -> Result<f64> {
    let ws = LikelihoodWorkspace::new(data, params.beta, profiles, quad)?;
    Ok(ws.log_likelihood(params.alpha, params.sigma2()))
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlFit {
    pub params: ModelParams,
    pub log_likelihood: f64,
    /// Scaled residuals of the α-, β- and σ²-equations at the estimate.
    pub residuals: [f64; 3],
    /// Sampled (β, β-equation residual) pairs used for bracketing.
    pub trace: Vec<(f64, f64)>,
    pub n_transitions: usize,
}

fn beta_search_grids() -> Vec<Vec<f64>> {
    vec![
        geometric_grid(1e-4, 5.0, 60),
        geometric_grid(1e-7, 50.0, 120),
        (0..=80).map(|k| -2.0 + 2.0 * k as f64 / 80.0 - 1e-9).collect(),
    ]
}

/// Scan for sign changes of `residual`, refine each with Brent, and keep the
/// root with the largest `objective`. Crossings from + to − (maxima) are preferred.
fn solve_beta_equation<R, O>(mut residual: R, mut objective: O) -> Result<(f64, Vec<(f64, f64)>)>
where
    R: FnMut(f64) -> f64,
    O: FnMut(f64) -> f64,
{
    let mut trace_all = Vec::new();
    for grid in beta_search_grids() {
        let (brackets, trace) = find_brackets(&mut residual, &grid);
        trace_all.extend(trace.iter().copied());
        if brackets.is_empty() {
            continue;
        }
        let value = |b: f64| trace.iter().find(|p| p.0 == b).map(|p| p.1).unwrap_or(f64::NAN);
        let maxima: Vec<(f64, f64)> = brackets.iter().copied().filter(|&(a, _)| value(a) > 0.0).collect();
        let chosen = if maxima.is_empty() { brackets } else { maxima };
        let mut best: Option<(f64, f64)> = None;
        for (a, b) in chosen {
            let Ok(root) = brent_root(&mut residual, a, b, RootOptions::default()) else {
                continue;
            };
            let obj = objective(root);
            if obj.is_finite() && best.is_none_or(|(_, o)| obj > o) {
                best = Some((root, obj));
            }
        }
        if let Some((root, _)) = best {
            return Ok((root, trace_all));
        }
    }
    let shown: Vec<String> = trace_all.iter().step_by(10).map(|(b, r)| format!("({b:.3e}, {r:.3e})")).collect();
    Err(Error::Estimation(format!(
        "no sign change of the β-equation found; trace: {}",
        shown.join(" ")
    )))
}

/// ML estimate of (α, β, σ) for known therapy profiles.
pub fn ml_fit(data: &(impl TransitionSource + ?Sized), profiles: &ProfileSet, quad: &Quadrature) -> Result<MlFit> {
    let groups = group_transitions(&data.transitions())?;
    let ws_at = |beta: f64| LikelihoodWorkspace::from_groups(&groups, beta, profiles, quad);
    let residual = |beta: f64| {
        ws_at(beta)
            .and_then(|ws| ws.profile_alpha_sigma2().map(|(a, s)| ws.beta_residual(a, s)))
            .unwrap_or(f64::NAN)
    };
    let objective = |beta: f64| {
        ws_at(beta)
            .and_then(|ws| ws.profile_alpha_sigma2().map(|(a, s)| ws.log_likelihood(a, s)))
            .unwrap_or(f64::NAN)
    };
    let (beta, trace) = solve_beta_equation(residual, objective)?;
    let ws = ws_at(beta)?;
    let (alpha, sigma2) = ws.profile_alpha_sigma2()?;
    let residuals = ws.scaled_residuals(alpha, sigma2);
    if residuals.iter().any(|r| !(r.abs() < RESIDUAL_TOL)) {
        return Err(Error::Estimation(format!(
            "likelihood equations not satisfied at the estimate (scaled residuals {residuals:?})"
        )));
    }
    let params = ModelParams::new(alpha, beta, sigma2.sqrt()).map_err(|e| {
        Error::Estimation(format!("likelihood root is outside the parameter space: {e}"))
    })?;
    Ok(MlFit {
        params,
        log_likelihood: ws.log_likelihood(alpha, sigma2),
        residuals,
        trace,
        n_transitions: ws.n(),
    })
}

/// ML estimate of (α, β, σ) for an untreated group (C ≡ 0, D ≡ 0, V ≡ 1).
pub fn ml_fit_control(data: &(impl TransitionSource + ?Sized), quad: &Quadrature) -> Result<MlFit> {
    ml_fit(data, &ProfileSet::untreated(), quad)
}

/// Constant c for H₀: C(t) = c. Solves the α-equation with C ≡ 0 and the
/// given D, V at the control β̂, σ̂, and returns α̂ minus that growth rate.
pub fn ml_constant_growth_shift(
    data: &(impl TransitionSource + ?Sized),
    control: &ModelParams,
    d: &TherapyProfile,
    v: &TherapyProfile,
    quad: &Quadrature,
) -> Result<f64> {
    let profiles = ProfileSet::new(TherapyProfile::zero(Role::C), d.clone(), v.clone())?;
    let ws = LikelihoodWorkspace::new(data, control.beta, &profiles, quad)?;
    Ok(control.alpha - ws.alpha_given_sigma2(control.sigma2())?)
}

/// Constant d for H₀: D(t) = d. Solves the β-equation with D ≡ 0 and the
/// given C, V at the control α̂, σ̂, and returns β̂ minus that death rate.
pub fn ml_constant_death_shift(
    data: &(impl TransitionSource + ?Sized),
    control: &ModelParams,
    c: &TherapyProfile,
    v: &TherapyProfile,
    quad: &Quadrature,
) -> Result<f64> {
    let profiles = ProfileSet::new(c.clone(), TherapyProfile::zero(Role::D), v.clone())?;
    let groups = group_transitions(&data.transitions())?;
    let (alpha, sigma2) = (control.alpha, control.sigma2());
    let ws_at = |beta: f64| LikelihoodWorkspace::from_groups(&groups, beta, &profiles, quad);
    let (composite, _) = solve_beta_equation(
        |b| ws_at(b).map(|ws| ws.beta_residual(alpha, sigma2)).unwrap_or(f64::NAN),
        |b| ws_at(b).map(|ws| ws.log_likelihood(alpha, sigma2)).unwrap_or(f64::NAN),
    )?;
    Ok(control.beta - composite)
}

/// Constant v for H₀: V(t) = v. Solves the σ²-equation with V ≡ 1 and the
/// given C, D at the control α̂, β̂, and returns that σ² divided by σ̂².
pub fn ml_constant_variance_scale(
    data: &(impl TransitionSource + ?Sized),
    control: &ModelParams,
    c: &TherapyProfile,
    d: &TherapyProfile,
    quad: &Quadrature,
) -> Result<f64> {
    let profiles = ProfileSet::new(c.clone(), d.clone(), TherapyProfile::one())?;
    let ws = LikelihoodWorkspace::new(data, control.beta, &profiles, quad)?;
    Ok(ws.sigma2_given_alpha(control.alpha)? / control.sigma2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transition_law, StudyDesign};
    use crate::simulate::{simulate, SimulationConfig};

    fn quad() -> Quadrature {
        Quadrature::default()
    }

    fn truth() -> ModelParams {
        ModelParams::new(0.5, 0.2, 0.01).unwrap()
    }

    fn control_panel(seed: u64, paths: usize, points: usize, t_end: f64) -> PathPanel {
        let design = StudyDesign::uniform(0.0, t_end, points, 1.0).unwrap();
        simulate(&truth(), &ProfileSet::untreated(), &design, &SimulationConfig::exact(paths, seed), &quad()).unwrap()
    }

    #[test]
    fn psi_closed_form_and_zero_factor() {
        let p = ProfileSet::untreated();
        let v = psi_integral(3.0, 4.0, (0, 0, 1, 2), 0.2, &p, &quad()).unwrap();
        assert!((v - (1.0 - (-0.4f64).exp()) / 0.4).abs() < 1e-15);
        assert_eq!(psi_integral(3.0, 4.0, (0, 1, 0, 1), 0.2, &p, &quad()).unwrap(), 0.0);
    }

    #[test]
    fn psi_beta_derivative_identity() {
        let knots: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let curved = ProfileSet::new(
            TherapyProfile::grid_spline(Role::C, &knots, &[0.0, 0.01, 0.03, 0.02, 0.04, 0.05]).unwrap(),
            TherapyProfile::grid_spline(Role::D, &knots, &[0.0, -0.02, -0.05, -0.04, -0.01, 0.0]).unwrap(),
            TherapyProfile::grid_spline(Role::V, &knots, &[1.0, 0.8, 1.3, 0.9, 1.1, 1.0]).unwrap(),
        )
        .unwrap();
        for profiles in [ProfileSet::untreated(), curved] {
            for idx in [(0, 0, 0, 1), (0, 1, 0, 1), (0, 0, 1, 1), (0, 0, 1, 2)] {
                let h = 1e-5;
                let f = |b| psi_integral(1.0, 2.5, idx, b, &profiles, &quad()).unwrap();
                let fd = (f(0.2 + h) - f(0.2 - h)) / (2.0 * h);
                let next = psi_integral(1.0, 2.5, (idx.0 + 1, idx.1, idx.2, idx.3), 0.2, &profiles, &quad()).unwrap();
                let exact = -(idx.3 as f64) * next;
                if exact != 0.0 {
                    assert!(((fd - exact) / exact).abs() < 1e-5, "{idx:?}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn likelihood_matches_density_product() {
        let panel = control_panel(4, 3, 4, 3.0);
        let knots = [0.0, 1.0, 2.0, 3.0];
        let profiles = ProfileSet::new(
            TherapyProfile::grid_spline(Role::C, &knots, &[0.0, 0.02, 0.01, 0.03]).unwrap(),
            TherapyProfile::constant(Role::D, -0.04).unwrap(),
            TherapyProfile::grid_spline(Role::V, &knots, &[1.0, 0.7, 1.2, 0.9]).unwrap(),
        )
        .unwrap();
        for prof in [ProfileSet::untreated(), profiles] {
            let ll = log_likelihood(&panel, &truth(), &prof, &quad()).unwrap();
            let mut direct = 0.0;
            for tr in panel.transitions() {
                direct += transition_law(&truth(), &prof, tr.t, tr.s, tr.from, &quad()).unwrap().log_density(tr.to);
            }
            assert!((ll - direct).abs() < 1e-9, "{ll} vs {direct}");
            let mut rows = panel.values().to_vec();
            rows.reverse();
            let swapped = PathPanel::new(panel.design().clone(), rows, "").unwrap();
            assert!((log_likelihood(&swapped, &truth(), &prof, &quad()).unwrap() - ll).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_residual_is_scaled_score() {
        let panel = control_panel(11, 5, 6, 5.0);
        let ws = LikelihoodWorkspace::new(&panel, 0.21, &ProfileSet::untreated(), &quad()).unwrap();
        let (a, s2) = (0.49, 1.2e-4);
        let h = 1e-6;
        let l = |b: f64| {
            LikelihoodWorkspace::new(&panel, b, &ProfileSet::untreated(), &quad()).unwrap().log_likelihood(a, s2)
        };
        let score = (l(0.21 + h) - l(0.21 - h)) / (2.0 * h);
        let r = ws.beta_residual(a, s2);
        assert!((r - s2 * score).abs() < 1e-6 * (1.0 + r.abs()), "{r} vs {}", s2 * score);
    }

    #[test]
    fn control_fit_recovers_truth_and_maximizes() {
        let panel = control_panel(2024, 25, 51, 50.0);
        let fit = ml_fit_control(&panel, &quad()).unwrap();
        let p = fit.params;
        assert!((p.alpha - 0.5).abs() / 0.5 < 0.1);
        assert!((p.beta - 0.2).abs() / 0.2 < 0.1);
        assert!((p.sigma - 0.01).abs() / 0.01 < 0.15);
        let ll = |a: f64, b: f64, s: f64| {
            log_likelihood(&panel, &ModelParams::new(a, b, s).unwrap(), &ProfileSet::untreated(), &quad()).unwrap()
        };
        let best = ll(p.alpha, p.beta, p.sigma);
        assert!(best >= ll(0.5, 0.2, 0.01));
        for da in [-1.0, 0.0, 1.0] {
            for db in [-1.0, 0.0, 1.0] {
                for ds in [-1.0, 0.0, 1.0] {
                    let other = ll(p.alpha * (1.0 + 1e-3 * da), p.beta * (1.0 + 1e-3 * db), p.sigma * (1.0 + 1e-2 * ds));
                    assert!(best >= other - 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_free_fit_recovers_gompertz_curve() {
        let grid: Vec<f64> = (0..51).map(|k| k as f64).collect();
        let det = |t: f64| (2.5 * (1.0 - (-0.2 * t).exp())).exp();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                grid.iter()
                    .enumerate()
                    .map(|(j, &t)| if j == 0 { 1.0 } else { det(t) * (1.0 + 1e-10 * (((i * 7 + j * 3) % 5) as f64 - 2.0)) })
                    .collect()
            })
            .collect();
        let panel = PathPanel::new(StudyDesign::new(grid, 1.0).unwrap(), rows, "").unwrap();
        let p = ml_fit_control(&panel, &quad()).unwrap().params;
        assert!((p.alpha - 0.5).abs() < 5e-5, "{p:?}");
        assert!((p.beta - 0.2).abs() < 5e-5, "{p:?}");
    }

    #[test]
    fn constant_shifts_noise_free() {
        let design = StudyDesign::uniform(0.0, 50.0, 51, 1.0).unwrap();
        let tiny = ModelParams::new(0.5, 0.2, 1e-7).unwrap();
        let cfg = SimulationConfig::exact(5, 1);
        let c0 = TherapyProfile::constant(Role::C, 0.025).unwrap();
        let d0 = TherapyProfile::constant(Role::D, -0.05).unwrap();
        let v0 = TherapyProfile::constant(Role::V, 0.49).unwrap();

        let g = simulate(&tiny, &ProfileSet::untreated().with(c0.clone()), &design, &cfg, &quad()).unwrap();
        let c = ml_constant_growth_shift(&g, &tiny, &TherapyProfile::zero(Role::D), &TherapyProfile::one(), &quad())
            .unwrap();
        assert!((c - 0.025).abs() < 1e-4, "c = {c}");

        let g = simulate(&tiny, &ProfileSet::untreated().with(d0.clone()), &design, &cfg, &quad()).unwrap();
        let d = ml_constant_death_shift(&g, &tiny, &TherapyProfile::zero(Role::C), &TherapyProfile::one(), &quad())
            .unwrap();
        assert!((d + 0.05).abs() < 1e-4, "d = {d}");

        // variance scale with exact α, β: within sampling error
        let p = truth();
        let mut vs = Vec::new();
        for seed in 0..20 {
            let g = simulate(&p, &ProfileSet::untreated().with(v0.clone()), &design, &SimulationConfig::exact(25, seed), &quad())
                .unwrap();
            vs.push(
                ml_constant_variance_scale(&g, &p, &TherapyProfile::zero(Role::C), &TherapyProfile::zero(Role::D), &quad())
                    .unwrap(),
            );
        }
        let mean = vs.iter().sum::<f64>() / vs.len() as f64;
        // sd of one estimate ≈ 0.49·√(2/1250)
        assert!((mean - 0.49).abs() < 3.0 * 0.49 * (2.0f64 / 1250.0).sqrt() / (20f64).sqrt() * 1.5, "{mean}");
    }

    #[test]
    fn irregular_sample_likelihood() {
        let s = IrregularSample::new(vec![
            (vec![0.0, 1.0, 3.0], vec![1.0, 1.5, 2.5]),
            (vec![0.0, 2.0], vec![1.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(s.transitions().len(), 3);
        let ll = log_likelihood(&s, &truth(), &ProfileSet::untreated(), &quad()).unwrap();
        let direct: f64 = s
            .transitions()
            .iter()
            .map(|tr| {
                transition_law(&truth(), &ProfileSet::untreated(), tr.t, tr.s, tr.from, &quad())
                    .unwrap()
                    .log_density(tr.to)
            })
            .sum();
        assert!((ll - direct).abs() < 1e-9);
        assert!(IrregularSample::new(vec![(vec![0.0, 1.0], vec![1.0, -1.0])]).is_err());
    }
}
