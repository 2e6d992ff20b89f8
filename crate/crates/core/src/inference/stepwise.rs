//! Three-group stepwise estimation of C, D, V₁ and V₂.
//!
//! A control group fixes (α, β, σ) by maximum likelihood. The first treated
//! group then yields pointwise estimates of its rate function and V₁ through
//! the moment relations, and the second group yields the remaining rate
//! function and V₂ given the first group's pointwise rate. Each pointwise
//! series is smoothed by LOESS and interpolated by a natural cubic spline.

use serde::{Deserialize, Serialize};

use super::curves::sample_moment_curves;
use super::likelihood::{ml_fit_control, MlFit};
use super::loess::{loess, LoessConfig};
use crate::error::{Error, Result};
use crate::model::{
    recover_c, recover_d, recover_v, Guards, ModelParams, MomentCurves, ProfileSet, Recovered, RelationForm, Role,
    TherapyProfile, V_FLOOR,
};
use crate::numeric::{NaturalCubicSpline, Quadrature};
use crate::simulate::PathPanel;

/// Which therapy the first treated group receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Ordering {
    /// G₁ gets an anti-proliferative therapy (C); G₂ adds a death-inducing one (D).
    #[default]
    #[serde(rename = "apf")]
    AntiProliferativeFirst,
    /// G₁ gets a death-inducing therapy (D); G₂ adds an anti-proliferative one (C).
    #[serde(rename = "dif")]
    DeathInducedFirst,
}

impl Ordering {
    /// Rate function estimated from G₁.
    pub fn first_rate(self) -> Role {
        match self {
            Ordering::AntiProliferativeFirst => Role::C,
            Ordering::DeathInducedFirst => Role::D,
        }
    }

    /// Rate function estimated from G₂.
    pub fn second_rate(self) -> Role {
        match self {
            Ordering::AntiProliferativeFirst => Role::D,
            Ordering::DeathInducedFirst => Role::C,
        }
    }
}

/// How a pointwise series becomes a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Smoother {
    Loess(LoessConfig),
    /// Spline straight through the pointwise values (no smoothing); missing
    /// points are filled by the spline through the remaining ones.
    Interpolate,
}

/// Separate smoothers for the rate functions (C, D) and the variance functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub rate: Smoother,
    pub variance: Smoother,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            rate: Smoother::Loess(LoessConfig {
                span: 0.15,
                degree: 2,
                robustness_iters: 0,
            }),
            variance: Smoother::Loess(LoessConfig::default()),
        }
    }
}

impl SmoothingConfig {
    /// The same smoother for every function.
    pub fn uniform(smoother: Smoother) -> Self {
        Self {
            rate: smoother,
            variance: smoother,
        }
    }

    pub fn for_role(&self, role: Role) -> Smoother {
        match role {
            Role::C | Role::D => self.rate,
            Role::V => self.variance,
        }
    }
}

/// Settings shared by the fit and every bootstrap re-estimation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub relation_form: RelationForm,
    #[serde(default)]
    pub guards: Guards,
    #[serde(default)]
    pub quadrature: Quadrature,
}

/// Pointwise estimates from one treated group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    /// C or D, depending on group and ordering.
    pub rate: Recovered,
    pub variance: Recovered,
}

fn known(n: usize, value: f64) -> Vec<Option<f64>> {
    vec![Some(value); n]
}

/// Pointwise rate and V₁ for the first treated group.
pub fn estimate_first_group(
    curves: &MomentCurves,
    params: &ModelParams,
    ordering: Ordering,
    cfg: &PipelineConfig,
) -> Result<GroupEstimate> {
    let n = curves.len();
    let form = cfg.relation_form;
    match ordering {
        Ordering::AntiProliferativeFirst => Ok(GroupEstimate {
            rate: recover_c(curves, params, &known(n, 0.0), form)?,
            variance: recover_v(curves, params, &known(n, 0.0), form, &cfg.guards)?,
        }),
        Ordering::DeathInducedFirst => {
            let rate = recover_d(curves, params, &known(n, 0.0), form, &cfg.guards)?;
            let variance = recover_v(curves, params, &rate.values, form, &cfg.guards)?;
            Ok(GroupEstimate { rate, variance })
        }
    }
}

/// Pointwise rate and V₂ for the second treated group, given the first
/// group's rate at each grid point.
pub fn estimate_second_group(
    curves: &MomentCurves,
    params: &ModelParams,
    ordering: Ordering,
    upstream: &[Option<f64>],
    cfg: &PipelineConfig,
) -> Result<GroupEstimate> {
    let form = cfg.relation_form;
    match ordering {
        Ordering::AntiProliferativeFirst => {
            let rate = recover_d(curves, params, upstream, form, &cfg.guards)?;
            let variance = recover_v(curves, params, &rate.values, form, &cfg.guards)?;
            Ok(GroupEstimate { rate, variance })
        }
        Ordering::DeathInducedFirst => Ok(GroupEstimate {
            rate: recover_c(curves, params, upstream, form)?,
            variance: recover_v(curves, params, upstream, form, &cfg.guards)?,
        }),
    }
}

/// Smoothed values of a pointwise series at every grid point.
pub fn smooth_series(grid: &[f64], values: &[Option<f64>], smoother: &Smoother, role: Role) -> Result<Vec<f64>> {
    let mut out = match smoother {
        Smoother::Loess(cfg) => loess(grid, values, cfg)?,
        Smoother::Interpolate => {
            let (xs, ys): (Vec<f64>, Vec<f64>) = grid
                .iter()
                .zip(values)
                .filter_map(|(&t, v)| v.map(|v| (t, v)))
                .unzip();
            if xs.len() < 2 {
                return Err(Error::Estimation(format!("{role:?}: fewer than two usable pointwise values")));
            }
            let s = NaturalCubicSpline::new(&xs, &ys)?;
            grid.iter()
                .zip(values)
                .map(|(&t, v)| v.unwrap_or_else(|| s.eval(t)))
                .collect()
        }
    };
    if role == Role::V {
        out.iter_mut().for_each(|v| *v = v.max(V_FLOOR));
    }
    if let Some(j) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{role:?}: smoothed value at t={} is not finite", grid[j])));
    }
    Ok(out)
}

/// Smooth a pointwise series and interpolate it with a natural cubic spline.
pub fn finalize_profile(grid: &[f64], values: &[Option<f64>], smoother: &Smoother, role: Role) -> Result<TherapyProfile> {
    let smoothed = smooth_series(grid, values, smoother, role)?;
    TherapyProfile::grid_spline(role, grid, &smoothed)
}

/// Everything the stepwise fit produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub control: MlFit,
    pub ordering: Ordering,
    pub config: PipelineConfig,
    pub grid: Vec<f64>,
    pub c: TherapyProfile,
    pub d: TherapyProfile,
    pub v1: TherapyProfile,
    pub v2: TherapyProfile,
    pub raw_c: Recovered,
    pub raw_d: Recovered,
    pub raw_v1: Recovered,
    pub raw_v2: Recovered,
    /// Grid indices where a treated group's sample curves violate m₂ ≥ m₁.
    pub jensen_warnings: [Vec<usize>; 2],
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        self.control.params
    }

    /// Fitted model of the first treated group.
    pub fn g1_profiles(&self) -> ProfileSet {
        let base = ProfileSet::untreated().with(self.v1.clone());
        match self.ordering {
            Ordering::AntiProliferativeFirst => base.with(self.c.clone()),
            Ordering::DeathInducedFirst => base.with(self.d.clone()),
        }
    }

    /// Fitted model of the second treated group.
    pub fn g2_profiles(&self) -> ProfileSet {
        ProfileSet {
            c: self.c.clone(),
            d: self.d.clone(),
            v: self.v2.clone(),
        }
    }

    pub fn profile(&self, role: Role, group: usize) -> &TherapyProfile {
        match (role, group) {
            (Role::C, _) => &self.c,
            (Role::D, _) => &self.d,
            (Role::V, 1) => &self.v1,
            (Role::V, _) => &self.v2,
        }
    }

    /// Pointwise first-group rate, used as the second group's companion input.
    pub fn first_rate_raw(&self) -> &Recovered {
        match self.ordering {
            Ordering::AntiProliferativeFirst => &self.raw_c,
            Ordering::DeathInducedFirst => &self.raw_d,
        }
    }
}

/// Run the full pipeline on three panels sharing one grid.
pub fn stepwise_fit(
    control: &PathPanel,
    g1: &PathPanel,
    g2: &PathPanel,
    ordering: Ordering,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    if control.grid() != g1.grid() || control.grid() != g2.grid() {
        return Err(Error::Validation("control, G1 and G2 panels must share one observation grid".into()));
    }
    let ml = ml_fit_control(control, &cfg.quadrature)?;
    let c1 = sample_moment_curves(g1)?;
    let c2 = sample_moment_curves(g2)?;
    stepwise_fit_curves(ml, &c1, &c2, ordering, cfg)
}

/// Steps after the control fit, starting from given moment curves. Feeding
/// exact theoretical curves here bypasses sampling noise.
pub fn stepwise_fit_curves(
    control: MlFit,
    curves1: &MomentCurves,
    curves2: &MomentCurves,
    ordering: Ordering,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    if curves1.grid != curves2.grid {
        return Err(Error::Validation("G1 and G2 curves must share one grid".into()));
    }
    let grid = curves1.grid.clone();
    let params = control.params;
    let first = estimate_first_group(curves1, &params, ordering, cfg)?;
    let second = estimate_second_group(curves2, &params, ordering, &first.rate.values, cfg)?;
    let sm = &cfg.smoothing;
    let (r1, r2) = (ordering.first_rate(), ordering.second_rate());
    let first_profile = finalize_profile(&grid, &first.rate.values, &sm.for_role(r1), r1)?;
    let second_profile = finalize_profile(&grid, &second.rate.values, &sm.for_role(r2), r2)?;
    let v1 = finalize_profile(&grid, &first.variance.values, &sm.variance, Role::V)?;
    let v2 = finalize_profile(&grid, &second.variance.values, &sm.variance, Role::V)?;
    let (c, d, raw_c, raw_d) = match ordering {
        Ordering::AntiProliferativeFirst => (first_profile, second_profile, first.rate, second.rate),
        Ordering::DeathInducedFirst => (second_profile, first_profile, second.rate, first.rate),
    };
    Ok(FitResult {
        control,
        ordering,
        config: *cfg,
        grid,
        c,
        d,
        v1,
        v2,
        raw_c,
        raw_d,
        raw_v1: first.variance,
        raw_v2: second.variance,
        jensen_warnings: [curves1.jensen_violations(), curves2.jensen_violations()],
    })
}

/// Mean of squared differences between two curves.
pub fn mse_curve(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() || fitted.is_empty() {
        return Err(Error::Validation(format!(
            "MSE needs equal non-empty lengths, got {} and {}",
            fitted.len(),
            truth.len()
        )));
    }
    Ok(fitted.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / fitted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{theoretical_moments, ParametricForm, StudyDesign};

    #[test]
    fn mse_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mse_curve(&a, &a).unwrap(), 0.0);
        let off: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        assert!((mse_curve(&off, &a).unwrap() - 0.01).abs() < 1e-15);
        let alt: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 0.2 } else { -0.2 }).collect();
        assert!((mse_curve(&alt, &a).unwrap() - 0.04).abs() < 1e-15);
        assert!(mse_curve(&a, &a[..2]).is_err());
    }

    fn exact_fit(ordering: Ordering, g1: &ProfileSet, g2: &ProfileSet) -> FitResult {
        let params = ModelParams::new(0.5, 0.2, 0.01).unwrap();
        let design = StudyDesign::uniform(0.0, 50.0, 51, 1.0).unwrap();
        let quad = Quadrature::default();
        let c1 = theoretical_moments(&params, g1, &design, &quad).unwrap();
        let c2 = theoretical_moments(&params, g2, &design, &quad).unwrap();
        let ml = MlFit {
            params,
            log_likelihood: 0.0,
            residuals: [0.0; 3],
            trace: vec![],
            n_transitions: 0,
        };
        let cfg = PipelineConfig {
            smoothing: SmoothingConfig::uniform(Smoother::Interpolate),
            ..Default::default()
        };
        stepwise_fit_curves(ml, &c1, &c2, ordering, &cfg).unwrap()
    }

    #[test]
    fn exact_curves_reproduce_truth_both_orderings() {
        let c = TherapyProfile::closure(Role::C, ParametricForm::Linear { intercept: 0.0, slope: 0.005 }).unwrap();
        let d = TherapyProfile::closure(Role::D, ParametricForm::RationalBump { p: -0.12, q: 50.0, r: 10.0 }).unwrap();
        let v = |b| {
            TherapyProfile::closure(Role::V, ParametricForm::LognormalOffsetSquared { a: 0.7, b, mu: 3.0, s2: 0.5 })
                .unwrap()
        };
        let grid: Vec<f64> = (0..51).map(|k| k as f64).collect();
        for ordering in [Ordering::AntiProliferativeFirst, Ordering::DeathInducedFirst] {
            let first = if ordering == Ordering::AntiProliferativeFirst { c.clone() } else { d.clone() };
            let g1 = ProfileSet::untreated().with(first).with(v(10.0));
            let g2 = ProfileSet::new(c.clone(), d.clone(), v(15.0)).unwrap();
            let fit = exact_fit(ordering, &g1, &g2);
            for &t in &grid[1..50] {
                assert!((fit.c.value(t) - c.value(t)).abs() < 1e-6, "{ordering:?} C at {t}");
                assert!((fit.d.value(t) - d.value(t)).abs() < 1e-6, "{ordering:?} D at {t}");
                assert!((fit.v1.value(t) - v(10.0).value(t)).abs() < 1e-6, "{ordering:?} V1 at {t}");
                assert!((fit.v2.value(t) - v(15.0).value(t)).abs() < 1e-6, "{ordering:?} V2 at {t}");
            }
        }
    }
}
