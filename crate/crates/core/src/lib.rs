//! Gompertz-type diffusion with time-dependent therapy functions: exact and
//! Euler simulation, maximum-likelihood and moment-based estimation, and
//! parametric bootstrap tests of constancy.

pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod io;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod simulate;

pub use error::{Error, Result};
