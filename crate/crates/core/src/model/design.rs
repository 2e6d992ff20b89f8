use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared observation grid and degenerate initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    grid: Vec<f64>,
    x0: f64,
}

impl StudyDesign {
    pub fn new(grid: Vec<f64>, x0: f64) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Validation("design grid needs at least two times".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("design grid must be finite and strictly increasing".into()));
        }
        if !(x0.is_finite() && x0 > 0.0) {
            return Err(Error::Validation(format!("initial state must be positive, got {x0}")));
        }
        Ok(Self { grid, x0 })
    }

    /// `points` equally spaced times on `[t0, t_end]`.
    pub fn uniform(t0: f64, t_end: f64, points: usize, x0: f64) -> Result<Self> {
        if points < 2 || !(t_end > t0) {
            return Err(Error::Validation(format!(
                "uniform grid needs t_end > t0 and >= 2 points (got [{t0}, {t_end}], {points})"
            )));
        }
        let h = (t_end - t0) / (points - 1) as f64;
        let grid = (0..points)
            .map(|j| if j + 1 == points { t_end } else { t0 + h * j as f64 })
            .collect();
        Self::new(grid, x0)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn t0(&self) -> f64 {
        self.grid[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Same grid translated by `shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::new(self.grid.iter().map(|t| t + shift).collect(), self.x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_hits_endpoints() {
        let d = StudyDesign::uniform(0.0, 50.0, 51, 1.0).unwrap();
        assert_eq!(d.len(), 51);
        assert_eq!(d.t0(), 0.0);
        assert_eq!(d.t_end(), 50.0);
        assert_eq!(d.grid()[10], 10.0);
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(StudyDesign::new(vec![0.0, 1.0, 1.0], 1.0).is_err());
        assert!(StudyDesign::new(vec![0.0, 1.0], 0.0).is_err());
        assert!(StudyDesign::new(vec![0.0], 1.0).is_err());
    }
}
