//! Shadow pre-training that produces the `alpha` prior.
//!
//! The server runs its own small federation on held-back data with the full
//! client pipeline under the strategy being verified. Alongside it, for every
//! calibration volume, `replicas` honest probe clients with fixed
//! label-skewed subsets of that size train from the shadow global model each
//! round. The per-epoch `alpha` values of each (round, volume) cell are
//! summarized by empirical quantiles.

use alloc::vec::Vec;

use super::aggregate::aggregate;
use super::prior::{quantile, AlphaPrior, Band};
use super::verify::Verdict;
use crate::client::{client_embedding, local_round, ClientData, LocalConfig, QuantityBranch};
use crate::datagen::{dirichlet_partition, skewed_subset, split_indices, Dataset};
use crate::exec::Executor;
use crate::numcore::{stream, ModelSpec, ParamVector, SimRng};
use crate::strategies::{StrategyCtx, StrategyKind};
use crate::{config_err, Result};

/// Shadow client ids start here so they never collide with real clients.
pub const SHADOW_ID_BASE: u32 = 1 << 24;
/// Fewest `alpha` samples a prior cell may be built from.
pub const MIN_CELL_SAMPLES: usize = 20;
/// Sub-stream tag for pacing-client randomness.
const PACING_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Ascending calibration volumes, in samples.
    pub volumes: Vec<u64>,
    pub rounds: usize,
    pub replicas: usize,
    pub quantile_lo: f64,
    pub quantile_hi: f64,
    /// Label skew of the shadow subsets.
    pub beta: f64,
    pub local: LocalConfig,
    /// Share of the shadow pool given to pacing clients, with probes drawing
    /// from the rest. At 1 both use the whole pool.
    pub pacing_fraction: f64,
    /// Shards of the pacing share that drive the shadow global model.
    pub pacing_clients: usize,
    /// Pacing clients aggregated per round.
    pub pacing_per_round: usize,
    pub seed: u64,
}

impl CalibrationConfig {
    /// Rows of a `shadow_len` pool given to (pacing, probes).
    pub fn pool_split(&self, shadow_len: usize) -> (usize, usize) {
        if self.pacing_fraction >= 1.0 {
            return (shadow_len, shadow_len);
        }
        let probes = libm::round(shadow_len as f64 * (1.0 - self.pacing_fraction)) as usize;
        (shadow_len - probes, probes)
    }

    pub fn validate(&self, shadow_len: usize) -> Result<()> {
        self.local.validate()?;
        if !(self.pacing_fraction > 0.0 && self.pacing_fraction <= 1.0) {
            return Err(config_err("pacing fraction must be in (0, 1]"));
        }
        let (pacing_len, probe_len) = self.pool_split(shadow_len);
        if self.volumes.is_empty() {
            return Err(config_err("at least one calibration volume is required"));
        }
        if self.volumes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("calibration volumes must be strictly ascending"));
        }
        if self.volumes[0] < self.local.batch_size as u64 {
            return Err(config_err("calibration volumes must be at least one batch"));
        }
        let largest = *self.volumes.last().expect("non-empty");
        if largest as usize > probe_len {
            return Err(config_err(alloc::format!(
                "insufficient shadow data: volume {largest} needs more than the {probe_len} probe samples"
            )));
        }
        if self.pacing_clients == 0 || self.pacing_per_round == 0 {
            return Err(config_err("calibration needs at least one pacing client per round"));
        }
        if pacing_len < self.pacing_clients * self.local.batch_size {
            return Err(config_err(alloc::format!(
                "insufficient shadow data: {} pacing clients need at least {} samples",
                self.pacing_clients,
                self.pacing_clients * self.local.batch_size
            )));
        }
        if self.rounds == 0 {
            return Err(config_err("calibration needs at least one round"));
        }
        if self.replicas < MIN_CELL_SAMPLES {
            return Err(config_err(alloc::format!(
                "calibration needs at least {MIN_CELL_SAMPLES} replicas per volume"
            )));
        }
        if !(0.0..1.0).contains(&self.quantile_lo) || !(self.quantile_lo < self.quantile_hi && self.quantile_hi <= 1.0)
        {
            return Err(config_err("calibration quantiles must satisfy 0 <= lo < hi <= 1"));
        }
        Ok(())
    }
}

/// Fitted prior plus the raw samples behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub prior: AlphaPrior,
    /// `alphas[round][volume_index]`, sorted ascending.
    pub alphas: Vec<Vec<Vec<f64>>>,
    /// Shadow global model after the last calibrated round.
    pub shadow_theta: ParamVector,
}

struct Replica {
    id: u32,
    volume_index: usize,
    rows: Vec<usize>,
}

/// Run shadow training and fit quantile bands per (round, volume).
///
/// Two kinds of shadow clients take part. *Pacing* clients hold a Dirichlet
/// partition of one share of the shadow pool, shaped like the real federation; each round
/// `pacing_per_round` of them train and are aggregated into the shadow
/// global model, so it advances at roughly the real model's pace. *Probe*
/// replicas hold fixed subsets of each calibration volume; every round all
/// of them train from the current shadow global model and only their
/// `alpha` values are kept.
///
/// `init_theta` and `init_branch` should be the same initial global model and
/// branch the real federation starts from.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_prior<E: Executor>(
    spec: &ModelSpec,
    strategy: StrategyKind,
    shadow: &Dataset,
    shadow_pool: &[usize],
    init_theta: &ParamVector,
    init_branch: &QuantityBranch,
    cfg: &CalibrationConfig,
    exec: &E,
) -> Result<Calibration> {
    cfg.validate(shadow_pool.len())?;
    let mut split_rng = SimRng::derive(cfg.seed, &[stream::SHADOW, PACING_TAG]);
    let (probe_pool, pacing_pool) = if cfg.pacing_fraction >= 1.0 {
        (shadow_pool.to_vec(), shadow_pool.to_vec())
    } else {
        let (probe_pos, pacing_pos) = split_indices(shadow_pool.len(), 1.0 - cfg.pacing_fraction, &mut split_rng);
        (
            probe_pos.iter().map(|&i| shadow_pool[i]).collect::<Vec<_>>(),
            pacing_pos.iter().map(|&i| shadow_pool[i]).collect::<Vec<_>>(),
        )
    };
    let pacing = dirichlet_partition(
        shadow,
        &pacing_pool,
        cfg.pacing_clients,
        cfg.beta,
        cfg.local.batch_size,
        split_rng.next_u64(),
    )?;
    let pacing: Vec<Replica> = pacing
        .assignments
        .into_iter()
        .enumerate()
        .map(|(i, rows)| Replica {
            id: SHADOW_ID_BASE + i as u32,
            volume_index: usize::MAX,
            rows,
        })
        .collect();
    let probe_base = SHADOW_ID_BASE + cfg.pacing_clients as u32;
    let mut probes = Vec::with_capacity(cfg.volumes.len() * cfg.replicas);
    for (vi, &volume) in cfg.volumes.iter().enumerate() {
        for rep in 0..cfg.replicas {
            let mut rng = SimRng::derive(cfg.seed, &[stream::SHADOW, vi as u64, rep as u64]);
            probes.push(Replica {
                id: probe_base + (vi * cfg.replicas + rep) as u32,
                volume_index: vi,
                rows: skewed_subset(shadow, &probe_pool, volume as usize, cfg.beta, &mut rng)?,
            });
        }
    }

    let mut theta = init_theta.clone();
    let mut branch = init_branch.clone();
    let mut ctx = StrategyCtx::new(strategy, theta.dim())?;
    let mut bands = Vec::with_capacity(cfg.rounds);
    let mut samples = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let chosen = SimRng::derive(cfg.seed, &[stream::SHADOW, PACING_TAG, round as u64])
            .sample_indices(pacing.len(), cfg.pacing_per_round);
        let mut work: Vec<&Replica> = chosen.iter().map(|&i| &pacing[i]).collect();
        work.extend(probes.iter());
        let outcomes = exec.map(work.clone(), |r| {
            let data = ClientData {
                id: r.id,
                dataset: shadow,
                indices: &r.rows,
                embedding: client_embedding(cfg.seed, r.id),
            };
            let rule = ctx.client_rule(r.id, &theta);
            let mut rng = SimRng::derive(cfg.seed, &[stream::SHADOW, r.id as u64, round as u64]);
            local_round(&data, spec, &theta, &branch, &rule, &cfg.local, 1.0, &mut rng)
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let (paced, probed) = outcomes.split_at(chosen.len());

        let mut cell_alphas: Vec<Vec<f64>> = (0..cfg.volumes.len()).map(|_| Vec::new()).collect();
        for (r, o) in probes.iter().zip(probed) {
            cell_alphas[r.volume_index].extend_from_slice(&o.update.alphas);
        }
        let mut row = Vec::with_capacity(cfg.volumes.len());
        for xs in cell_alphas.iter_mut() {
            xs.sort_by(f64::total_cmp);
            row.push(Band {
                lo: quantile(xs, cfg.quantile_lo),
                hi: quantile(xs, cfg.quantile_hi),
                n_samples: xs.len(),
            });
        }
        bands.push(row);
        samples.push(cell_alphas);

        let updates: Vec<_> = paced.iter().map(|o| o.update.clone()).collect();
        let verdicts = alloc::vec![Verdict::accept(None); updates.len()];
        let agg = aggregate(&updates, &verdicts, &theta, &branch.phi)?;
        let strategy_out: Vec<_> = paced.iter().map(|o| (o.update.client_id, o.strategy.clone())).collect();
        ctx.post_round(&strategy_out, pacing.len())?;
        theta = agg.theta;
        branch = branch.with_phi(agg.phi)?;
    }

    Ok(Calibration {
        prior: AlphaPrior::new(cfg.volumes.clone(), bands)?,
        alphas: samples,
        shadow_theta: theta,
    })
}
