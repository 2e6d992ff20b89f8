use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Baseline rates of the homogeneous Gompertz diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Growth rate (1/time).
    pub alpha: f64,
    /// Death rate (1/time).
    pub beta: f64,
    /// Diffusion scale (1/√time).
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("sigma", self.sigma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_rates() {
        assert!(ModelParams::new(0.5, 0.2, 0.01).is_ok());
        assert!(ModelParams::new(0.0, 0.2, 0.01).is_err());
        assert!(ModelParams::new(0.5, -0.2, 0.01).is_err());
        assert!(ModelParams::new(0.5, 0.2, f64::NAN).is_err());
    }
}
