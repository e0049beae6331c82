use alloc::vec;
use alloc::vec::Vec;

use super::model::loss_and_grad;
use super::{l2_norm, Batch, ModelSpec, ParamVector};
use crate::{config_err, Error, Result};

/// Result of one pass over an ordered list of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub theta: ParamVector,
    /// L2 norm of the raw loss gradient at each step, in batch order.
    pub grad_norms: Vec<f64>,
    /// `theta - theta_initial`.
    pub delta: ParamVector,
}

/// Plain SGD: `theta <- theta - eta * grad_r` for each batch in order.
pub fn sgd_epoch(spec: &ModelSpec, theta: &ParamVector, eta: f64, batches: &[Batch<'_>]) -> Result<EpochOutcome> {
    sgd_epoch_with(spec, theta, eta, batches, |_, grad, step| {
        for (s, g) in step.iter_mut().zip(grad) {
            *s = -eta * g;
        }
    })
}

/// SGD where `rule(theta, grad, step)` writes the additive step for each
/// batch. The recorded gradient norms are always those of the raw loss
/// gradient, whatever the rule does with it.
pub fn sgd_epoch_with<F>(
    spec: &ModelSpec,
    theta: &ParamVector,
    eta: f64,
    batches: &[Batch<'_>],
    mut rule: F,
) -> Result<EpochOutcome>
where
    F: FnMut(&[f64], &[f64], &mut [f64]),
{
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(config_err("learning rate must be positive"));
    }
    if batches.is_empty() {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    if theta.dim() != spec.num_params() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_params(),
            found: theta.dim(),
        });
    }
    theta.ensure_finite()?;
    for b in batches {
        if b.width() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                found: b.width(),
            });
        }
        for i in 0..b.len() {
            if b.label(i) >= spec.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: b.label(i),
                    num_classes: spec.num_classes,
                });
            }
            if b.row(i).iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("batch features"));
            }
        }
    }

    let mut current = theta.clone();
    let mut grad = vec![0.0; theta.dim()];
    let mut step = vec![0.0; theta.dim()];
    let mut grad_norms = Vec::with_capacity(batches.len());
    for b in batches {
        loss_and_grad(spec, current.as_slice(), b, &mut grad);
        grad_norms.push(l2_norm(&grad));
        rule(current.as_slice(), &grad, &mut step);
        for (t, s) in current.as_mut_slice().iter_mut().zip(&step) {
            *t += s;
        }
    }
    current.ensure_finite()?;
    let delta = current.sub(theta)?;
    Ok(EpochOutcome {
        theta: current,
        grad_norms,
        delta,
    })
}
