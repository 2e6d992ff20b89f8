//! Small numerical building blocks: Simpson quadrature, natural cubic
//! splines and a bracketing root finder.

pub mod quadrature;
pub mod roots;
pub mod spline;

pub use quadrature::{simpson, Quadrature};
pub use roots::{brent_root, find_brackets, RootOptions};
pub use spline::NaturalCubicSpline;
