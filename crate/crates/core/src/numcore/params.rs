use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Flat vector of model (or branch) parameters.
///
/// Entries are always finite; every fallible operation re-checks that and
/// refuses to produce a vector containing NaN or infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        super::l2_norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::from_vec(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    /// `self + scale * other`, in place.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        self.ensure_finite()
    }

    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::from_vec(self.values.iter().map(|v| v * scale).collect())
    }

    pub(crate) fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameter vector"))
        }
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
