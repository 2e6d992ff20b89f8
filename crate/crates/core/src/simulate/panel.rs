use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StudyDesign;

/// `d` sample paths observed on a shared grid. Row = subject, column = time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPanel {
    design: StudyDesign,
    values: Vec<Vec<f64>>,
    label: String,
}

impl PathPanel {
    pub fn new(design: StudyDesign, values: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("panel has no subjects".into()));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != design.len() {
                return Err(Error::Validation(format!(
                    "subject {} has {} observations, grid has {}",
                    i + 1,
                    row.len(),
                    design.len()
                )));
            }
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Validation(format!(
                    "subject {} has non-positive value {v} at t={}",
                    i + 1,
                    design.grid()[j]
                )));
            }
            if row[0] != design.x0() {
                return Err(Error::Validation(format!(
                    "subject {} starts at {} instead of x0={}",
                    i + 1,
                    row[0],
                    design.x0()
                )));
            }
        }
        Ok(Self {
            design,
            values,
            label: label.into(),
        })
    }

    pub fn design(&self) -> &StudyDesign {
        &self.design
    }

    pub fn grid(&self) -> &[f64] {
        self.design.grid()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.values.len()
    }

    pub fn n_times(&self) -> usize {
        self.design.len()
    }

    /// Values of every subject at grid index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    /// Same panel observed on `grid + shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::new(self.design.shifted(shift)?, self.values.clone(), self.label.clone())
    }
}
