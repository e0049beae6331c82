//! Client side: local training, the quantity-aware branch, and the upload.

mod branch;
mod volume;

use alloc::vec::Vec;

pub use branch::{
    branch_param_count, client_embedding, BranchInput, QuantityBranch, StepOutcome, EMBEDDING_DIM, INPUT_DIM,
    MAX_ALPHA_RATIO, STATS_DIM,
};
pub use volume::{alpha_direct, branch_grad_alpha, branch_loss, estimate_volume, EpochObservation};

use crate::datagen::Dataset;
use crate::numcore::{sgd_epoch_with, Batch, ModelSpec, ParamVector, SimRng};
use crate::strategies::{local_step, prox_step, scaffold_control_update, ClientRule, StrategyOutput};
use crate::{config_err, Error, Result};

/// One client's per-round upload.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    /// Model after local training minus the round's global model.
    pub model_delta: ParamVector,
    /// Branch prediction after each local epoch.
    pub alphas: Vec<f64>,
    /// Branch parameters after local training.
    pub phi: ParamVector,
    pub observations: Vec<EpochObservation>,
    pub claimed_volume: u64,
}

/// Local training settings shared by all clients of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    /// Branch updates after each epoch.
    pub branch_steps: usize,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        Ok(())
    }
}

/// A client's identity and local data.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a> {
    pub id: u32,
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
    pub embedding: [f64; EMBEDDING_DIM],
}

/// Everything a local round produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub update: ClientUpdate,
    pub strategy: StrategyOutput,
    pub true_volume: u64,
    /// Branch steps that were skipped (non-finite or no descent).
    pub skipped_branch_steps: usize,
}

/// Rows of one epoch, gathered contiguously in shuffled order.
struct EpochRows {
    features: Vec<f64>,
    labels: Vec<usize>,
    width: usize,
}

impl EpochRows {
    fn gather(ds: &Dataset, order: &[usize]) -> Self {
        let mut features = Vec::with_capacity(order.len() * ds.input_dim());
        let mut labels = Vec::with_capacity(order.len());
        for &i in order {
            features.extend_from_slice(ds.row(i));
            labels.push(ds.label(i));
        }
        Self {
            features,
            labels,
            width: ds.input_dim(),
        }
    }

    fn batches(&self, batch_size: usize) -> Vec<Batch<'_>> {
        self.labels
            .chunks(batch_size)
            .zip(self.features.chunks(batch_size * self.width))
            .map(|(y, x)| Batch::new(x, y, self.width).expect("chunk shapes agree"))
            .collect()
    }
}

/// Claimed volume for a misreport factor (1 for honest clients).
pub fn claimed_volume(true_volume: u64, misreport_factor: f64) -> u64 {
    (libm::round(true_volume as f64 * misreport_factor) as u64).max(1)
}

/// Run `epochs` epochs of local SGD from `global_theta` under `rule`, training
/// the branch against the true local volume after every epoch and recording
/// its `alpha` prediction for that epoch.
#[allow(clippy::too_many_arguments)]
pub fn local_round(
    data: &ClientData<'_>,
    spec: &ModelSpec,
    global_theta: &ParamVector,
    global_branch: &QuantityBranch,
    rule: &ClientRule,
    cfg: &LocalConfig,
    misreport_factor: f64,
    rng: &mut SimRng,
) -> Result<LocalOutcome> {
    cfg.validate()?;
    if data.indices.is_empty() {
        return Err(Error::EmptyShard(data.id));
    }
    if !(misreport_factor > 0.0 && misreport_factor.is_finite()) {
        return Err(config_err("misreport factor must be positive"));
    }
    let true_volume = data.indices.len() as u64;
    let anchor = global_theta.as_slice();
    let mut theta = global_theta.clone();
    let mut personal = match rule {
        ClientRule::Ditto { personal, .. } => Some(personal.clone()),
        _ => None,
    };
    let mut branch = global_branch.clone();
    let mut order = data.indices.to_vec();
    let mut alphas = Vec::with_capacity(cfg.epochs);
    let mut observations = Vec::with_capacity(cfg.epochs);
    let mut total_steps = 0usize;
    let mut skipped = 0usize;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let rows = EpochRows::gather(data.dataset, &order);
        let batches = rows.batches(cfg.batch_size);
        total_steps += batches.len();
        let out = sgd_epoch_with(spec, &theta, cfg.eta, &batches, |t, g, s| {
            local_step(rule, t, anchor, g, cfg.eta, s)
        })?;
        if let (ClientRule::Ditto { lambda, .. }, Some(p)) = (rule, personal.as_mut()) {
            let lambda = *lambda;
            let pout = sgd_epoch_with(spec, p, cfg.eta, &batches, |t, g, s| {
                prox_step(lambda, t, anchor, g, cfg.eta, s)
            })?;
            *p = pout.theta;
        }
        let obs = EpochObservation {
            delta_norm: out.delta.norm(),
            mean_grad_norm: out.grad_norms.iter().sum::<f64>() / out.grad_norms.len() as f64,
            eta: cfg.eta,
            epoch_index: epoch,
        };
        theta = out.theta;

        let input = BranchInput::new(data.embedding, &obs, cfg.epochs);
        for _ in 0..cfg.branch_steps {
            let (next, outcome) = branch.step(&input, &obs, true_volume, cfg.batch_size)?;
            if matches!(outcome, StepOutcome::SkippedNonFinite | StepOutcome::SkippedNoDescent) {
                skipped += 1;
            }
            branch = next;
        }
        alphas.push(branch.predict_alpha(&input)?);
        observations.push(obs);
    }

    let strategy = match rule {
        ClientRule::Plain | ClientRule::Prox { .. } => StrategyOutput::None,
        ClientRule::Scaffold { c_global, c_local } => StrategyOutput::Scaffold {
            c_local: scaffold_control_update(c_global, c_local, global_theta, &theta, total_steps, cfg.eta)?,
        },
        ClientRule::Ditto { .. } => StrategyOutput::Ditto {
            personal: personal.expect("ditto rule carries a personal model"),
        },
    };
    Ok(LocalOutcome {
        update: ClientUpdate {
            client_id: data.id,
            model_delta: theta.sub(global_theta)?,
            alphas,
            phi: branch.phi,
            observations,
            claimed_volume: claimed_volume(true_volume, misreport_factor),
        },
        strategy,
        true_volume,
        skipped_branch_steps: skipped,
    })
}
