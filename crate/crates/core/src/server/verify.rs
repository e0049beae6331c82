use alloc::vec::Vec;

use super::prior::AlphaPrior;
use crate::client::{estimate_volume, ClientUpdate};
use crate::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    Accept,
    Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagReason {
    None,
    AlphaOutOfBand,
    VolumeInconsistent,
    NotEstimable,
}

/// Outcome of checking one upload.
///
/// A flag always has a reason, and every flag except `NotEstimable` carries
/// the server's own volume estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub reason: FlagReason,
    /// Server-side volume estimate in samples, when one could be formed.
    pub estimated_volume: Option<u64>,
}

impl Verdict {
    pub fn accept(estimated_volume: Option<u64>) -> Self {
        Self {
            status: VerdictStatus::Accept,
            reason: FlagReason::None,
            estimated_volume,
        }
    }

    pub fn flag(reason: FlagReason, estimated_volume: Option<u64>) -> Self {
        debug_assert!(reason != FlagReason::None);
        Self {
            status: VerdictStatus::Flag,
            reason,
            estimated_volume,
        }
    }

    pub fn is_flag(&self) -> bool {
        self.status == VerdictStatus::Flag
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    /// Largest accepted `|estimate - claimed| / claimed`.
    pub tau: f64,
    pub batch_size: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            batch_size: 8,
        }
    }
}

pub(crate) fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Median over epochs of the per-epoch volume estimates; epochs that carry no
/// volume information are skipped. `None` when no epoch is estimable.
pub fn estimate_update_volume(update: &ClientUpdate, batch_size: usize) -> Result<Option<f64>> {
    if update.alphas.len() != update.observations.len() {
        return Err(Error::DimensionMismatch {
            expected: update.observations.len(),
            found: update.alphas.len(),
        });
    }
    let mut estimates = Vec::with_capacity(update.alphas.len());
    for (obs, &alpha) in update.observations.iter().zip(&update.alphas) {
        match estimate_volume(obs, alpha, batch_size) {
            Ok(v) => estimates.push(v),
            Err(Error::NotEstimable) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(median(&mut estimates))
}

/// Check one upload against the prior.
///
/// 1. band check: the median uploaded `alpha` must lie in the prior's band for
///    `(round, claimed_volume)`;
/// 2. consistency check: the server's own volume estimate must be within
///    `tau` (relative) of the claim.
///
/// The band check is reported first when both fail.
pub fn verify(update: &ClientUpdate, prior: &AlphaPrior, round: usize, cfg: &VerifyConfig) -> Result<Verdict> {
    if update.alphas.is_empty() {
        return Err(config_err("upload carries no alpha values"));
    }
    if update.claimed_volume == 0 {
        return Err(config_err("claimed volume must be positive"));
    }
    let Some(estimate) = estimate_update_volume(update, cfg.batch_size)? else {
        return Ok(Verdict::flag(FlagReason::NotEstimable, None));
    };
    let estimated = Some((libm::round(estimate) as u64).max(1));
    let mut alphas = update.alphas.clone();
    let alpha_median = median(&mut alphas).expect("non-empty");
    let band = prior.lookup(round, update.claimed_volume);
    if !band.contains(alpha_median) {
        return Ok(Verdict::flag(FlagReason::AlphaOutOfBand, estimated));
    }
    let claimed = update.claimed_volume as f64;
    if (estimate - claimed).abs() / claimed > cfg.tau {
        return Ok(Verdict::flag(FlagReason::VolumeInconsistent, estimated));
    }
    Ok(Verdict::accept(estimated))
}
