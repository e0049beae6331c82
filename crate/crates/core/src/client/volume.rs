//! Volume estimation from one epoch's update and the branch loss built on it.
//!
//! Internally everything is in iteration units: a client holding `v` samples
//! with batch size `b` runs `v / b` iterations per epoch. Public inputs and
//! outputs are in samples; `batch_size` converts at the boundary.

use crate::{Error, Result};

/// What one local epoch looked like, as uploaded to the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochObservation {
    /// `||theta_end - theta_start||` over the epoch.
    pub delta_norm: f64,
    /// Mean of the per-batch gradient L2 norms over the epoch.
    pub mean_grad_norm: f64,
    pub eta: f64,
    pub epoch_index: usize,
}

impl EpochObservation {
    fn validate(&self) -> Result<()> {
        if !(self.delta_norm.is_finite() && self.mean_grad_norm.is_finite()) {
            return Err(Error::NonFinite("epoch observation"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(crate::config_err("learning rate must be positive"));
        }
        if self.mean_grad_norm <= 0.0 || self.delta_norm <= 0.0 {
            return Err(Error::NotEstimable);
        }
        Ok(())
    }

    /// Iteration count implied by the update at `alpha = 1`.
    fn raw_iterations(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.delta_norm / (self.eta * self.mean_grad_norm))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(crate::config_err("adjustment factor must be positive and finite"));
    }
    Ok(())
}

fn to_iterations(volume: f64, batch_size: usize) -> f64 {
    volume / batch_size as f64
}

/// Predicted iterations `delta / (eta * g * alpha)`.
fn predicted_iterations(obs: &EpochObservation, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(obs.raw_iterations()? / alpha)
}

/// Estimated training volume in samples:
/// `batch_size * delta_norm / (eta * mean_grad_norm * alpha)`.
pub fn estimate_volume(obs: &EpochObservation, alpha: f64, batch_size: usize) -> Result<f64> {
    Ok(predicted_iterations(obs, alpha)? * batch_size as f64)
}

/// The `alpha` for which [`estimate_volume`] returns exactly `true_volume`.
pub fn alpha_direct(obs: &EpochObservation, true_volume: u64, batch_size: usize) -> Result<f64> {
    if true_volume == 0 {
        return Err(crate::config_err("true volume must be positive"));
    }
    let alpha = obs.raw_iterations()? / to_iterations(true_volume as f64, batch_size);
    check_alpha(alpha)?;
    Ok(alpha)
}

/// Residual `predicted - true` in iterations.
///
/// Residuals within a few ulps of the target are rounding noise from the
/// two divisions (`alpha_direct` then `estimate_volume` do not invert each
/// other bit-for-bit); they are reported as exactly zero.
fn residual(obs: &EpochObservation, alpha: f64, true_volume: u64, batch_size: usize) -> Result<(f64, f64)> {
    let pred = predicted_iterations(obs, alpha)?;
    let target = to_iterations(true_volume as f64, batch_size);
    let r = pred - target;
    let r = if r.abs() <= 4.0 * f64::EPSILON * target.abs() {
        0.0
    } else {
        r
    };
    Ok((pred, r))
}

/// `0.5 * (predicted_iterations - true_iterations)^2`.
pub fn branch_loss(obs: &EpochObservation, alpha: f64, true_volume: u64, batch_size: usize) -> Result<f64> {
    let (_, r) = residual(obs, alpha, true_volume, batch_size)?;
    Ok(0.5 * r * r)
}

/// `d loss / d alpha = (pred - v) * (-pred / alpha)`.
pub fn branch_grad_alpha(obs: &EpochObservation, alpha: f64, true_volume: u64, batch_size: usize) -> Result<f64> {
    let (pred, r) = residual(obs, alpha, true_volume, batch_size)?;
    Ok(r * (-pred / alpha))
}
