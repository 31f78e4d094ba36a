use crate::error::{CoreError, Result};
use crate::math;
use alloc::vec::Vec;

/// A `D`-dimensional embedding with a flag recording unit normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    /// Wraps raw values without normalizing. Non-finite entries are rejected.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("embedding"));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// L2-normalizes `values`; zero or non-finite input is an error.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("embedding"));
        }
        math::normalize_in_place(&mut values)?;
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.values)
    }
}
