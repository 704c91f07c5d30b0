use serde::Serialize;

use super::TrainError;
use crate::data::SampleMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Inputs (rows = samples, columns = network inputs) with one target each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: SampleMatrix,
    targets: Vec<f64>,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: SampleMatrix, targets: Vec<f64>, split: Split) -> Result<Self, TrainError> {
        if inputs.rows() != targets.len() {
            return Err(TrainError::Shape(format!(
                "{} input rows for {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if inputs.has_nan() || targets.iter().any(|t| t.is_nan()) {
            return Err(TrainError::Shape("dataset contains NaN".into()));
        }
        Ok(Self {
            inputs,
            targets,
            split,
        })
    }

    pub fn inputs(&self) -> &SampleMatrix {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Same inputs, new targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self, TrainError> {
        Self::new(self.inputs.clone(), targets, self.split)
    }
}
