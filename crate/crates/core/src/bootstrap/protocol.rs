//! The four-test constancy protocol over both treated groups.
//!
//! For the anti-proliferative-first ordering the order is V₁, C, V₂, D; the
//! death-inducing-first ordering swaps C and D. Each constant is the ML value
//! under the forms accepted so far, and a rejected H₀ keeps the fitted curve.

use serde::{Deserialize, Serialize};

use super::{b_test, ml_constant, BootstrapConfig, Hypothesis, Target, TestResult};
use crate::error::Result;
use crate::inference::{
    estimate_second_group, finalize_profile, sample_moment_curves, stepwise_fit, FitResult, Ordering, PipelineConfig,
};
use crate::model::{on_grid, ProfileSet, Role, TherapyProfile};
use crate::simulate::{rng::child_seed, PathPanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    /// Tests in the order they were run.
    pub tests: Vec<TestResult>,
    /// One line per branch decision.
    pub log: Vec<String>,
    /// Stepwise fit before any test.
    pub initial_fit: FitResult,
    /// Fit with accepted constants substituted and G₂ re-estimated.
    pub final_fit: FitResult,
}

/// Fit the three panels, then run the protocol.
pub fn concatenated_protocol(
    control: &PathPanel,
    g1: &PathPanel,
    g2: &PathPanel,
    ordering: Ordering,
    cfg: &PipelineConfig,
    boot: &BootstrapConfig,
) -> Result<ProtocolOutcome> {
    let fit = stepwise_fit(control, g1, g2, ordering, cfg)?;
    protocol_from_fit(fit, control.n_subjects(), g1, g2, boot)
}

fn decide(
    test: &TestResult,
    constant: TherapyProfile,
    fitted: TherapyProfile,
    log: &mut Vec<String>,
) -> TherapyProfile {
    let label = test.hypothesis.target.label();
    log.push(format!(
        "{}: D = {:.7}, p = {:.4} -> {}",
        test.hypothesis.describe(),
        test.statistic,
        test.p_value,
        if test.reject {
            format!("reject; keep fitted {label}")
        } else {
            format!("accept; {label} = {}", constant.describe())
        }
    ));
    if test.reject {
        fitted
    } else {
        constant
    }
}

/// Run the protocol on an existing stepwise fit of `g1` and `g2`.
/// `control_paths` sizes the control panels simulated inside each replicate.
pub fn protocol_from_fit(
    fit: FitResult,
    control_paths: usize,
    g1: &PathPanel,
    g2: &PathPanel,
    boot: &BootstrapConfig,
) -> Result<ProtocolOutcome> {
    boot.validate()?;
    let cfg = fit.config;
    let params = fit.params();
    let quad = &cfg.quadrature;
    let ordering = fit.ordering;
    let grid = fit.grid.clone();
    let (r1, r2) = (ordering.first_rate(), ordering.second_rate());
    let (t1, t2) = match ordering {
        Ordering::AntiProliferativeFirst => (Target::C, Target::D),
        Ordering::DeathInducedFirst => (Target::D, Target::C),
    };
    let mut tests = Vec::with_capacity(4);
    let mut log = Vec::with_capacity(5);
    let refit = |h: Hypothesis| {
        if boot.refit_control {
            h.with_control_refit(control_paths)
        } else {
            Ok(h)
        }
    };

    // G1: variance scale with the fitted first rate
    let g1_base = ProfileSet::untreated().with(fit.profile(r1, 1).clone());
    let v1 = TherapyProfile::constant(Role::V, ml_constant(Role::V, g1, &params, &g1_base, quad)?)?;
    let hyp = refit(Hypothesis::new(Target::V1, v1.clone(), params, &g1_base.with(fit.v1.clone()), ordering, g1.n_subjects(), None)?)?;
    let test = b_test(&hyp, g1, &cfg, &boot.with_seed(child_seed(boot.seed, 0)))?;
    let v1_ctx = decide(&test, v1, fit.v1.clone(), &mut log);
    tests.push(test);

    // G1: first rate shift under the V₁ just decided
    let ctx1 = g1_base.with(v1_ctx.clone());
    let rate1 = TherapyProfile::constant(r1, ml_constant(r1, g1, &params, &ctx1, quad)?)?;
    let hyp = refit(Hypothesis::new(t1, rate1.clone(), params, &ctx1, ordering, g1.n_subjects(), None)?)?;
    let test = b_test(&hyp, g1, &cfg, &boot.with_seed(child_seed(boot.seed, 1)))?;
    let rate1_ctx = decide(&test, rate1, fit.profile(r1, 1).clone(), &mut log);
    tests.push(test);

    // G2 re-estimated with the decided first rate as companion
    let upstream_opt = on_grid(&rate1_ctx, &grid);
    let upstream: Vec<f64> = rate1_ctx.values_on(&grid);
    let curves2 = sample_moment_curves(g2)?;
    let est = estimate_second_group(&curves2, &params, ordering, &upstream_opt, &cfg)?;
    let rate2_fit = finalize_profile(&grid, &est.rate.values, &cfg.smoothing.for_role(r2), r2)?;
    let v2_fit = finalize_profile(&grid, &est.variance.values, &cfg.smoothing.variance, Role::V)?;
    log.push(format!("G2 re-estimated with {r1:?} = {}", rate1_ctx.describe()));

    let g2_base = ProfileSet::untreated().with(rate1_ctx.clone()).with(rate2_fit.clone());
    let v2 = TherapyProfile::constant(Role::V, ml_constant(Role::V, g2, &params, &g2_base, quad)?)?;
    let hyp = refit(Hypothesis::new(
        Target::V2,
        v2.clone(),
        params,
        &g2_base.with(v2_fit.clone()),
        ordering,
        g2.n_subjects(),
        Some(upstream.clone()),
    )?)?;
    let test = b_test(&hyp, g2, &cfg, &boot.with_seed(child_seed(boot.seed, 2)))?;
    let v2_ctx = decide(&test, v2, v2_fit, &mut log);
    tests.push(test);

    let ctx2 = g2_base.with(v2_ctx.clone());
    let rate2 = TherapyProfile::constant(r2, ml_constant(r2, g2, &params, &ctx2, quad)?)?;
    let hyp = refit(Hypothesis::new(t2, rate2.clone(), params, &ctx2, ordering, g2.n_subjects(), Some(upstream))?)?;
    let test = b_test(&hyp, g2, &cfg, &boot.with_seed(child_seed(boot.seed, 3)))?;
    let rate2_ctx = decide(&test, rate2, rate2_fit, &mut log);
    tests.push(test);

    let mut final_fit = fit.clone();
    final_fit.v1 = v1_ctx;
    final_fit.v2 = v2_ctx;
    match ordering {
        Ordering::AntiProliferativeFirst => {
            final_fit.c = rate1_ctx;
            final_fit.d = rate2_ctx;
            final_fit.raw_d = est.rate;
        }
        Ordering::DeathInducedFirst => {
            final_fit.d = rate1_ctx;
            final_fit.c = rate2_ctx;
            final_fit.raw_c = est.rate;
        }
    }
    final_fit.raw_v2 = est.variance;
    Ok(ProtocolOutcome {
        tests,
        log,
        initial_fit: fit,
        final_fit,
    })
}
