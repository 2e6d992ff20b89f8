//! The therapy-modulated Gompertz diffusion
//!
//! ```text
//! dX = {(α − C(t)) − (β − D(t)) ln X} X dt + σ √V(t) X dW,   X(t₀) = x₀
//! ```
//!
//! Under the log transform the process is Gaussian, so every quantity in this
//! module (moment curves, transition law, recovery relations) is available in
//! closed form up to one-dimensional quadrature.

mod design;
pub(crate) mod moments;
mod params;
mod relations;
mod therapy;

pub use design::StudyDesign;
pub use moments::{
    integrating_factor, mean_variance_x, theoretical_moments, transition_law, transition_terms, LogNormalLaw,
    MomentCurves, TransitionTerms,
};
pub use params::ModelParams;
pub use relations::{on_grid, recover_c, recover_d, recover_v, Guards, Recovered, RelationForm};
pub use therapy::{lognormal_density, ParametricForm, ProfileKind, ProfileSet, Role, TherapyProfile, V_FLOOR};
