//! Estimation: control-group maximum likelihood, sample moment curves,
//! pointwise therapy estimates, smoothing and goodness of fit.

mod curves;
pub mod likelihood;
mod loess;
mod stepwise;

pub use curves::{curves_from_values, numeric_derivative, sample_moment_curves};
pub use likelihood::{
    log_likelihood, ml_constant_death_shift, ml_constant_growth_shift, ml_constant_variance_scale, ml_fit,
    ml_fit_control, psi_integral, IrregularSample, LikelihoodWorkspace, MlFit, Transition, TransitionSource,
};
pub use loess::{loess, LoessConfig};
pub use stepwise::{
    estimate_first_group, estimate_second_group, finalize_profile, mse_curve, smooth_series, stepwise_fit,
    stepwise_fit_curves, FitResult, GroupEstimate, Ordering, PipelineConfig, Smoother, SmoothingConfig,
};
