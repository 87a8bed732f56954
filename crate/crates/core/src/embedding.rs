use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        }
    }
}

/// Face or voice attribute vector; unit-norm when produced by an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub modality: Modality,
}

impl Embedding {
    pub fn new(values: Vec<f64>, modality: Modality) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "embedding must be non-empty and finite".into(),
            ));
        }
        Ok(Self { values, modality })
    }

    /// Scales `values` to unit length.
    pub fn normalized(values: Vec<f64>, modality: Modality) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        Self::new(values.into_iter().map(|v| v / n).collect(), modality)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
