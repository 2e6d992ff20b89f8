//! Algebraic recovery of C, D and V from moment curves.
//!
//! Each relation comes in two equivalent forms: one written with m₂ and one
//! with m₁ and u. Companion inputs (the D used to recover C, and so on) are
//! given per grid point and may be missing, in which case the output is
//! missing too.

use serde::{Deserialize, Serialize};

use super::{ModelParams, MomentCurves, TherapyProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationForm {
    /// Uses m₁, m₂ and their derivatives.
    #[default]
    M2,
    /// Uses m₁, u and their derivatives.
    M1U,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guards {
    /// Points where the D denominator is smaller than this are dropped.
    pub denominator_eps: f64,
    /// Recovered variance values below this are floored and flagged.
    pub variance_floor: f64,
}

impl Default for Guards {
    fn default() -> Self {
        Self {
            denominator_eps: 1e-6,
            variance_floor: super::V_FLOOR,
        }
    }
}

/// Pointwise recovered values and the grid indices that needed a guard.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Recovered {
    pub values: Vec<Option<f64>>,
    /// Indices dropped because a denominator vanished.
    pub guarded: Vec<usize>,
    /// Indices whose value was raised to the variance floor.
    pub floored: Vec<usize>,
}

impl Recovered {
    /// Values with missing points replaced by NaN.
    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&j| self.values[j].is_none()).collect()
    }
}

/// A profile evaluated on a grid, in the companion format the relations take.
pub fn on_grid(profile: &TherapyProfile, grid: &[f64]) -> Vec<Option<f64>> {
    grid.iter().map(|&t| Some(profile.value(t))).collect()
}

fn check_len(curves: &MomentCurves, companion: &[Option<f64>]) -> Result<()> {
    curves.validate()?;
    if companion.len() != curves.len() {
        return Err(Error::Validation(format!(
            "companion profile has {} values for a {}-point grid",
            companion.len(),
            curves.len()
        )));
    }
    Ok(())
}

/// C = α − (β − D)(2m₂ − m₁) − m₂′, or α − (β − D)(m₁ + u) − m₁′ − u′/2.
pub fn recover_c(
    curves: &MomentCurves,
    params: &ModelParams,
    d: &[Option<f64>],
    form: RelationForm,
) -> Result<Recovered> {
    check_len(curves, d)?;
    let values = (0..curves.len())
        .map(|j| {
            let rate = params.beta - d[j]?;
            Some(match form {
                RelationForm::M2 => params.alpha - rate * (2.0 * curves.m2[j] - curves.m1[j]) - curves.dm2[j],
                RelationForm::M1U => {
                    params.alpha - rate * (curves.m1[j] + curves.u[j]) - curves.dm1[j] - 0.5 * curves.du[j]
                }
            })
        })
        .collect();
    Ok(Recovered {
        values,
        ..Default::default()
    })
}

/// D = β + (m₂′ − α + C)/(2m₂ − m₁), or β + (m₁′ + u′/2 − α + C)/(m₁ + u).
///
/// Points with a denominator below `guards.denominator_eps` are marked missing.
pub fn recover_d(
    curves: &MomentCurves,
    params: &ModelParams,
    c: &[Option<f64>],
    form: RelationForm,
    guards: &Guards,
) -> Result<Recovered> {
    check_len(curves, c)?;
    let mut guarded = Vec::new();
    let values: Vec<Option<f64>> = (0..curves.len())
        .map(|j| {
            let c = c[j]?;
            let (num, den) = match form {
                RelationForm::M2 => (curves.dm2[j], 2.0 * curves.m2[j] - curves.m1[j]),
                RelationForm::M1U => (curves.dm1[j] + 0.5 * curves.du[j], curves.m1[j] + curves.u[j]),
            };
            if !(den.abs() >= guards.denominator_eps) {
                guarded.push(j);
                return None;
            }
            Some(params.beta + (num - params.alpha + c) / den)
        })
        .collect();
    if values.iter().all(Option::is_none) {
        return Err(Error::Estimation(
            "death-rate relation is degenerate at every grid point".into(),
        ));
    }
    Ok(Recovered {
        values,
        guarded,
        floored: Vec::new(),
    })
}

/// V = (2/σ²)[(m₂′ − m₁′) + 2(β − D)(m₂ − m₁)], or (u′ + 2(β − D)u)/σ².
///
/// Values below `guards.variance_floor` are floored and flagged.
pub fn recover_v(
    curves: &MomentCurves,
    params: &ModelParams,
    d: &[Option<f64>],
    form: RelationForm,
    guards: &Guards,
) -> Result<Recovered> {
    check_len(curves, d)?;
    let s2 = params.sigma2();
    let mut floored = Vec::new();
    let values = (0..curves.len())
        .map(|j| {
            let rate = params.beta - d[j]?;
            let v = match form {
                RelationForm::M2 => {
                    2.0 / s2 * ((curves.dm2[j] - curves.dm1[j]) + 2.0 * rate * (curves.m2[j] - curves.m1[j]))
                }
                RelationForm::M1U => (curves.du[j] + 2.0 * rate * curves.u[j]) / s2,
            };
            if !(v >= guards.variance_floor) {
                floored.push(j);
                return Some(guards.variance_floor);
            }
            Some(v)
        })
        .collect();
    Ok(Recovered {
        values,
        guarded: Vec::new(),
        floored,
    })
}
