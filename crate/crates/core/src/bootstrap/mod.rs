//! Parametric bootstrap tests of H₀: H(t) = h(t) for a therapy function.
//!
//! The statistic is D = Σⱼ |Ĥ(tⱼ) − h(tⱼ)| over the observation grid. Its null
//! distribution comes from panels simulated under H₀ and pushed through the
//! same estimation steps as the observed data.

mod kde;
mod protocol;

pub use kde::{kde_null, quantile_sorted, sheather_jones_bandwidth, silverman_bandwidth, BandwidthRule, KdeCurve};
pub use protocol::{concatenated_protocol, protocol_from_fit, ProtocolOutcome};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    estimate_first_group, estimate_second_group, ml_constant_death_shift, ml_constant_growth_shift,
    ml_constant_variance_scale, ml_fit_control, sample_moment_curves, smooth_series, Ordering, PipelineConfig, TransitionSource,
};
use crate::model::{ModelParams, ProfileSet, Role, StudyDesign, TherapyProfile};
use crate::numeric::Quadrature;
use crate::simulate::{rng::child_seed, simulate, PathPanel, SimulationConfig};

/// Extra attempts granted to a replicate whose estimation fails.
pub const REPLICATE_RETRIES: u64 = 3;

/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 1500;

/// Smallest replicate count accepted.
pub const MIN_REPLICATES: usize = 100;

/// The function under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    C,
    D,
    V1,
    V2,
}

impl Target {
    pub fn role(self) -> Role {
        match self {
            Target::C => Role::C,
            Target::D => Role::D,
            Target::V1 | Target::V2 => Role::V,
        }
    }

    /// Treated group (1 or 2) the target is estimated from.
    pub fn group(self, ordering: Ordering) -> usize {
        match self {
            Target::V1 => 1,
            Target::V2 => 2,
            t if t.role() == ordering.first_rate() => 1,
            _ => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Target::C => "C",
            Target::D => "D",
            Target::V1 => "V1",
            Target::V2 => "V2",
        }
    }
}

/// H₀ together with everything needed to simulate under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub target: Target,
    pub h: TherapyProfile,
    /// Control-group estimates used for simulation and re-estimation.
    pub params: ModelParams,
    /// Profiles of the tested group under H₀; the target slot holds `h`.
    pub null_model: ProfileSet,
    pub ordering: Ordering,
    /// Paths per simulated panel.
    pub n_paths: usize,
    /// First-group rate on the grid, required for second-group targets.
    pub upstream: Option<Vec<f64>>,
    /// When set, every replicate also simulates a control panel of this many
    /// paths and re-fits (α, β, σ) from it before re-estimating the target.
    #[serde(default)]
    pub control_paths: Option<usize>,
}

impl Hypothesis {
    /// `context` supplies the non-target profiles; its target slot is replaced by `h`.
    pub fn new(
        target: Target,
        h: TherapyProfile,
        params: ModelParams,
        context: &ProfileSet,
        ordering: Ordering,
        n_paths: usize,
        upstream: Option<Vec<f64>>,
    ) -> Result<Self> {
        if h.role() != target.role() {
            return Err(Error::Validation(format!(
                "H0 function has role {:?} but target {} needs {:?}",
                h.role(),
                target.label(),
                target.role()
            )));
        }
        if n_paths < 2 {
            return Err(Error::Validation("bootstrap panels need at least two paths".into()));
        }
        if target.group(ordering) == 2 && upstream.is_none() {
            return Err(Error::Validation(format!(
                "target {} is estimated from G2 and needs the first-group rate",
                target.label()
            )));
        }
        Ok(Self {
            target,
            null_model: context.with(h.clone()),
            h,
            params,
            ordering,
            n_paths,
            upstream,
            control_paths: None,
        })
    }

    /// Propagate control-group estimation error into the replicates.
    pub fn with_control_refit(mut self, control_paths: usize) -> Result<Self> {
        if control_paths < 2 {
            return Err(Error::Validation("control refit needs at least two paths".into()));
        }
        self.control_paths = Some(control_paths);
        Ok(self)
    }

    pub fn group(&self) -> usize {
        self.target.group(self.ordering)
    }

    pub fn describe(&self) -> String {
        format!("H0: {}(t) = {}", self.target.label(), self.h.describe())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub m: usize,
    pub level: f64,
    pub seed: u64,
    /// Re-fit the control group inside every replicate of the protocol.
    #[serde(default = "default_true")]
    pub refit_control: bool,
}

fn default_true() -> bool {
    true
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_REPLICATES,
            level: 0.05,
            seed: 0,
            refit_control: true,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < MIN_REPLICATES {
            return Err(Error::Validation(format!(
                "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
                self.m
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Validation(format!("test level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub hypothesis: Hypothesis,
    /// Observed D.
    pub statistic: f64,
    /// D₁ … D_m in replicate order.
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub m: usize,
    pub seed: u64,
    pub level: f64,
    /// True when p ≤ level.
    pub reject: bool,
    /// Replicates that needed a fresh sub-seed.
    pub retried: Vec<usize>,
}

/// #{l : D_l ≥ D} / m.
pub fn p_value(statistic: f64, replicates: &[f64]) -> f64 {
    replicates.iter().filter(|&&d| d >= statistic).count() as f64 / replicates.len() as f64
}

/// Σⱼ |fitted(tⱼ) − h(tⱼ)| over the grid. Non-finite fitted values add nothing.
pub fn d_statistic(fitted: &TherapyProfile, h: &TherapyProfile, grid: &[f64]) -> f64 {
    d_from_values(&fitted.values_on(grid), h, grid)
}

fn d_from_values(fitted: &[f64], h: &TherapyProfile, grid: &[f64]) -> f64 {
    fitted
        .iter()
        .zip(grid)
        .map(|(f, &t)| (f - h.value(t)).abs())
        .filter(|d| d.is_finite())
        .sum()
}

/// Smoothed estimate of the hypothesis target on the panel grid, computed
/// exactly as the stepwise fit does.
pub fn reestimate(hyp: &Hypothesis, panel: &PathPanel, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    reestimate_with(hyp, &hyp.params, panel, cfg)
}

fn reestimate_with(hyp: &Hypothesis, params: &ModelParams, panel: &PathPanel, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let curves = sample_moment_curves(panel)?;
    let est = match hyp.group() {
        1 => estimate_first_group(&curves, params, hyp.ordering, cfg)?,
        _ => {
            let up: Vec<Option<f64>> = hyp
                .upstream
                .as_ref()
                .ok_or_else(|| Error::Validation("second-group target without upstream rate".into()))?
                .iter()
                .map(|v| Some(*v))
                .collect();
            estimate_second_group(&curves, params, hyp.ordering, &up, cfg)?
        }
    };
    let role = hyp.target.role();
    let values = if role == Role::V { est.variance } else { est.rate };
    smooth_series(panel.grid(), &values.values, &cfg.smoothing.for_role(role), role)
}

/// Source of replicate statistics; the default simulates under H₀.
pub trait ReplicateGenerator: Sync {
    fn replicate(&self, hyp: &Hypothesis, design: &StudyDesign, cfg: &PipelineConfig, seed: u64) -> Result<f64>;
}

/// Exact-transition panels under H₀, re-estimated with the pipeline settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactReplicates;

impl ReplicateGenerator for ExactReplicates {
    fn replicate(&self, hyp: &Hypothesis, design: &StudyDesign, cfg: &PipelineConfig, seed: u64) -> Result<f64> {
        let q = &cfg.quadrature;
        let sim = SimulationConfig::exact(hyp.n_paths, child_seed(seed, 0));
        let panel = simulate(&hyp.params, &hyp.null_model, design, &sim, q)?;
        let params = match hyp.control_paths {
            Some(n) => {
                let sim = SimulationConfig::exact(n, child_seed(seed, 1));
                let control = simulate(&hyp.params, &ProfileSet::untreated(), design, &sim, q)?;
                ml_fit_control(&control, q)?.params
            }
            None => hyp.params,
        };
        let est = reestimate_with(hyp, &params, &panel, cfg)?;
        Ok(d_from_values(&est, &hyp.h, design.grid()))
    }
}

/// b-Test of `hyp` against the observed panel of the tested group.
pub fn b_test(hyp: &Hypothesis, observed: &PathPanel, cfg: &PipelineConfig, boot: &BootstrapConfig) -> Result<TestResult> {
    b_test_with(&ExactReplicates, hyp, observed, cfg, boot)
}

pub fn b_test_with(
    generator: &impl ReplicateGenerator,
    hyp: &Hypothesis,
    observed: &PathPanel,
    cfg: &PipelineConfig,
    boot: &BootstrapConfig,
) -> Result<TestResult> {
    boot.validate()?;
    let design = observed.design();
    hyp.null_model.validate_on(design.grid())?;
    if let Some(up) = &hyp.upstream {
        if up.len() != design.len() {
            return Err(Error::Validation(format!(
                "upstream rate has {} values for a {}-point grid",
                up.len(),
                design.len()
            )));
        }
    }
    let statistic = d_from_values(&reestimate(hyp, observed, cfg)?, &hyp.h, design.grid());
    let draws: Vec<Result<(f64, bool)>> = (0..boot.m)
        .into_par_iter()
        .map(|l| {
            let base = child_seed(boot.seed, l as u64);
            let mut last = None;
            for attempt in 0..=REPLICATE_RETRIES {
                match generator.replicate(hyp, design, cfg, child_seed(base, attempt)) {
                    Ok(d) if d.is_finite() => return Ok((d, attempt > 0)),
                    Ok(d) => last = Some(Error::Numeric(format!("replicate statistic is {d}"))),
                    Err(e) => last = Some(e),
                }
            }
            let cause = last.map(|e| e.to_string()).unwrap_or_default();
            Err(Error::Estimation(format!(
                "bootstrap replicate {} of {} failed {} times; last error: {cause}",
                l + 1,
                hyp.describe(),
                REPLICATE_RETRIES + 1
            )))
        })
        .collect();
    let mut replicates = Vec::with_capacity(boot.m);
    let mut retried = Vec::new();
    for (l, r) in draws.into_iter().enumerate() {
        let (d, again) = r?;
        if again {
            retried.push(l);
        }
        replicates.push(d);
    }
    let p = p_value(statistic, &replicates);
    Ok(TestResult {
        hypothesis: hyp.clone(),
        statistic,
        replicates,
        p_value: p,
        m: boot.m,
        seed: boot.seed,
        level: boot.level,
        reject: p <= boot.level,
        retried,
    })
}

/// Maximum-likelihood constant for `role` on a group panel, holding the
/// other two profiles of `context` fixed.
pub fn ml_constant(
    role: Role,
    data: &(impl TransitionSource + ?Sized),
    params: &ModelParams,
    context: &ProfileSet,
    quad: &Quadrature,
) -> Result<f64> {
    match role {
        Role::C => ml_constant_growth_shift(data, params, &context.d, &context.v, quad),
        Role::D => ml_constant_death_shift(data, params, &context.c, &context.v, quad),
        Role::V => ml_constant_variance_scale(data, params, &context.c, &context.d, quad),
    }
}
