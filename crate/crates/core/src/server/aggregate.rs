use alloc::vec::Vec;

use super::verify::{Verdict, VerdictStatus};
use crate::client::ClientUpdate;
use crate::numcore::ParamVector;
use crate::{config_err, Error, Result};

/// One client's share of an aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub client_id: u32,
    pub volume: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub theta: ParamVector,
    pub phi: ParamVector,
    pub contributions: Vec<Contribution>,
    /// Clients left out because no volume could be attributed to them.
    pub dropped: Vec<u32>,
}

/// Volume a verdict lets the client aggregate with: the claim when accepted,
/// the server estimate when flagged, nothing when not estimable.
pub fn effective_volume(update: &ClientUpdate, verdict: &Verdict) -> Option<u64> {
    match verdict.status {
        VerdictStatus::Accept => Some(update.claimed_volume),
        VerdictStatus::Flag => verdict.estimated_volume,
    }
}

/// `w_i = v_i / sum(v)`, with the last weight set to `1 - sum(others)` so the
/// weights sum to exactly one.
pub fn volume_weights(volumes: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = volumes.iter().sum();
    if volumes.is_empty() || total == 0 {
        return Err(Error::NothingToAggregate);
    }
    let mut weights: Vec<f64> = volumes.iter().map(|&v| v as f64 / total as f64).collect();
    let last = weights.len() - 1;
    weights[last] = 1.0 - weights[..last].iter().sum::<f64>();
    Ok(weights)
}

/// Volume-weighted aggregation of model deltas and branch parameters.
pub fn aggregate(
    updates: &[ClientUpdate],
    verdicts: &[Verdict],
    global_theta: &ParamVector,
    global_phi: &ParamVector,
) -> Result<Aggregation> {
    if updates.len() != verdicts.len() {
        return Err(config_err("one verdict per update is required"));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (u, v) in updates.iter().zip(verdicts) {
        match effective_volume(u, v) {
            Some(vol) if vol > 0 => kept.push((u, vol)),
            _ => dropped.push(u.client_id),
        }
    }
    let volumes: Vec<u64> = kept.iter().map(|(_, v)| *v).collect();
    let weights = volume_weights(&volumes)?;
    let mut theta = global_theta.clone();
    let mut phi = global_phi.clone();
    let mut contributions = Vec::with_capacity(kept.len());
    for ((u, vol), &w) in kept.iter().zip(&weights) {
        theta.add_scaled(w, &u.model_delta)?;
        phi.add_scaled(w, &u.phi.sub(global_phi)?)?;
        contributions.push(Contribution {
            client_id: u.client_id,
            volume: *vol,
            weight: w,
        });
    }
    Ok(Aggregation {
        theta,
        phi,
        contributions,
        dropped,
    })
}

/// Weight shift from trusting claims: `claimed_j / sum(claimed) - true_j / sum(true)`.
pub fn weight_perturbation(claimed: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if claimed.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: claimed.len(),
        });
    }
    if claimed.iter().chain(truth).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(config_err("volumes must be positive"));
    }
    let sc: f64 = claimed.iter().sum();
    let st: f64 = truth.iter().sum();
    Ok(claimed.iter().zip(truth).map(|(c, t)| c / sc - t / st).collect())
}
