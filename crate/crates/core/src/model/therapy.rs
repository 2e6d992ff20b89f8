//! Time-dependent therapy functions C(t), D(t) and V(t).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{simpson, NaturalCubicSpline, Quadrature};

/// Lower bound applied to variance profiles.
pub const V_FLOOR: f64 = 1e-8;

/// Which slot of the model a profile occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Growth-rate reduction (anti-proliferative effect).
    C,
    /// Death-rate modification (cell-death induction).
    D,
    /// Infinitesimal variance multiplier.
    V,
}

impl Role {
    pub fn neutral(self) -> TherapyProfile {
        match self {
            Role::C | Role::D => TherapyProfile::zero(self),
            Role::V => TherapyProfile::one(),
        }
    }
}

/// Closed-form families used to declare study truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ParametricForm {
    /// `intercept + slope·t`
    Linear { intercept: f64, slope: f64 },
    /// `p·t² / (q + t(t − r))`
    RationalBump { p: f64, q: f64, r: f64 },
    /// `(a + b·Λ(t; μ, s²))²` with Λ the lognormal density.
    LognormalOffsetSquared { a: f64, b: f64, mu: f64, s2: f64 },
}

impl ParametricForm {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ParametricForm::Linear { intercept, slope } => intercept + slope * t,
            ParametricForm::RationalBump { p, q, r } => p * t * t / (q + t * (t - r)),
            ParametricForm::LognormalOffsetSquared { a, b, mu, s2 } => {
                let v = a + b * lognormal_density(t, mu, s2);
                v * v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ParametricForm::RationalBump { q, r, .. } if q - r * r / 4.0 <= 0.0 => Err(Error::Validation(format!(
                "rational bump denominator q + t(t-r) vanishes for some t (q={q}, r={r})"
            ))),
            ParametricForm::LognormalOffsetSquared { s2, .. } if !(s2 > 0.0) => {
                Err(Error::Validation(format!("lognormal shape s2 must be positive, got {s2}")))
            }
            _ => Ok(()),
        }
    }
}

/// Density of the lognormal law Λ(μ, s²) at `t`; zero for `t <= 0`.
pub fn lognormal_density(t: f64, mu: f64, s2: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let z = t.ln() - mu;
    (-z * z / (2.0 * s2)).exp() / (t * (2.0 * PI * s2).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProfileKind {
    Zero,
    One,
    Constant(f64),
    GridSpline(NaturalCubicSpline),
    Closure(ParametricForm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapyProfile {
    role: Role,
    kind: ProfileKind,
}

impl TherapyProfile {
    pub fn new(role: Role, kind: ProfileKind) -> Result<Self> {
        match &kind {
            ProfileKind::Constant(v) if !v.is_finite() => {
                return Err(Error::Validation(format!("constant profile must be finite, got {v}")))
            }
            ProfileKind::Constant(v) if role == Role::V && *v <= 0.0 => {
                return Err(Error::Validation(format!("variance profile must be positive, got {v}")))
            }
            ProfileKind::Closure(form) => form.validate()?,
            ProfileKind::GridSpline(s) if role == Role::V => {
                if let Some(v) = s.values().iter().find(|v| **v <= 0.0) {
                    return Err(Error::Validation(format!("variance knot value must be positive, got {v}")));
                }
            }
            _ => {}
        }
        Ok(Self { role, kind })
    }

    pub fn zero(role: Role) -> Self {
        Self { role, kind: ProfileKind::Zero }
    }

    pub fn one() -> Self {
        Self { role: Role::V, kind: ProfileKind::One }
    }

    pub fn constant(role: Role, value: f64) -> Result<Self> {
        Self::new(role, ProfileKind::Constant(value))
    }

    pub fn closure(role: Role, form: ParametricForm) -> Result<Self> {
        Self::new(role, ProfileKind::Closure(form))
    }

    /// Natural cubic spline through `(knots, values)`.
    pub fn grid_spline(role: Role, knots: &[f64], values: &[f64]) -> Result<Self> {
        Self::new(role, ProfileKind::GridSpline(NaturalCubicSpline::new(knots, values)?))
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn with_role(mut self, role: Role) -> Result<Self> {
        self.role = role;
        Self::new(role, self.kind)
    }

    /// The value if the profile does not depend on time.
    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            ProfileKind::Zero => Some(0.0),
            ProfileKind::One => Some(1.0),
            ProfileKind::Constant(v) => Some(v),
            _ => None,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::One => 1.0,
            ProfileKind::Constant(v) => *v,
            ProfileKind::GridSpline(s) => {
                let v = s.eval(t);
                if self.role == Role::V {
                    v.max(V_FLOOR)
                } else {
                    v
                }
            }
            ProfileKind::Closure(f) => f.eval(t),
        }
    }

    pub fn values_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.value(t)).collect()
    }

    /// ∫ₐᵇ profile(s) ds; exact for constants, linear forms and splines.
    pub fn integral(&self, a: f64, b: f64, quad: &Quadrature) -> f64 {
        match &self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::One => b - a,
            ProfileKind::Constant(v) => v * (b - a),
            ProfileKind::GridSpline(s) if self.role != Role::V => s.integral(a, b),
            ProfileKind::Closure(ParametricForm::Linear { intercept, slope }) => {
                intercept * (b - a) + 0.5 * slope * (b * b - a * a)
            }
            _ => simpson(|s| self.value(s), a, b, 2 * quad.panels_for(a, b)),
        }
    }

    /// Check role invariants on the observation grid.
    pub fn validate_on(&self, grid: &[f64]) -> Result<()> {
        for &t in grid {
            let v = self.value(t);
            if !v.is_finite() {
                return Err(Error::Validation(format!("{:?} profile is not finite at t={t}", self.role)));
            }
            if self.role == Role::V && v <= 0.0 {
                return Err(Error::Validation(format!("V profile must be positive, got {v} at t={t}")));
            }
        }
        Ok(())
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        match &self.kind {
            ProfileKind::Zero => "0".into(),
            ProfileKind::One => "1".into(),
            ProfileKind::Constant(v) => format!("{v}"),
            ProfileKind::GridSpline(s) => format!("natural cubic spline ({} knots)", s.knots().len()),
            ProfileKind::Closure(f) => match f {
                ParametricForm::Linear { intercept, slope } => format!("{intercept} + {slope}*t"),
                ParametricForm::RationalBump { p, q, r } => format!("{p}*t^2/({q} + t*(t - {r}))"),
                ParametricForm::LognormalOffsetSquared { a, b, mu, s2 } => {
                    format!("({a} + {b}*lognormal_pdf(t; {mu}, {s2}))^2")
                }
            },
        }
    }
}

/// The three therapy slots of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub c: TherapyProfile,
    pub d: TherapyProfile,
    pub v: TherapyProfile,
}

impl Default for ProfileSet {
    fn default() -> Self {
        Self::untreated()
    }
}

impl ProfileSet {
    /// C ≡ 0, D ≡ 0, V ≡ 1.
    pub fn untreated() -> Self {
        Self {
            c: TherapyProfile::zero(Role::C),
            d: TherapyProfile::zero(Role::D),
            v: TherapyProfile::one(),
        }
    }

    pub fn new(c: TherapyProfile, d: TherapyProfile, v: TherapyProfile) -> Result<Self> {
        for (p, role) in [(&c, Role::C), (&d, Role::D), (&v, Role::V)] {
            if p.role() != role {
                return Err(Error::Validation(format!(
                    "profile in slot {role:?} has role {:?}",
                    p.role()
                )));
            }
        }
        Ok(Self { c, d, v })
    }

    pub fn all_constant(&self) -> bool {
        self.c.constant_value().is_some() && self.d.constant_value().is_some() && self.v.constant_value().is_some()
    }

    pub fn validate_on(&self, grid: &[f64]) -> Result<()> {
        self.c.validate_on(grid)?;
        self.d.validate_on(grid)?;
        self.v.validate_on(grid)
    }

    pub fn get(&self, role: Role) -> &TherapyProfile {
        match role {
            Role::C => &self.c,
            Role::D => &self.d,
            Role::V => &self.v,
        }
    }

    pub fn with(&self, profile: TherapyProfile) -> Self {
        let mut out = self.clone();
        match profile.role() {
            Role::C => out.c = profile,
            Role::D => out.d = profile,
            Role::V => out.v = profile,
        }
        out
    }
}
