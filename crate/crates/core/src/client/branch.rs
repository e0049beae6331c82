//! The quantity-aware branch: a one-hidden-layer tanh network with a softplus
//! head mapping `[client embedding; round statistics]` to `alpha > 0`.

use alloc::vec;
use alloc::vec::Vec;

use super::volume::{branch_grad_alpha, branch_loss, EpochObservation};
use crate::numcore::{ParamVector, SimRng};
use crate::{config_err, Error, Result};

pub const EMBEDDING_DIM: usize = 8;
pub const STATS_DIM: usize = 4;
pub const INPUT_DIM: usize = EMBEDDING_DIM + STATS_DIM;

/// Floor applied before taking logs of observed magnitudes.
const LOG_FLOOR: f64 = 1e-12;
/// Step-size halvings tried before a branch step is abandoned.
const MAX_HALVINGS: usize = 40;
/// Largest factor by which one branch step may change the predicted `alpha`.
pub const MAX_ALPHA_RATIO: f64 = 2.0;

/// Fixed per-client embedding, a pure function of (experiment seed, client id).
pub fn client_embedding(seed: u64, client_id: u32) -> [f64; EMBEDDING_DIM] {
    let mut rng = SimRng::derive(seed, &[crate::numcore::stream::EMBEDDING, client_id as u64]);
    core::array::from_fn(|_| rng.uniform_range(-1.0, 1.0))
}

/// Branch input for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchInput {
    pub embedding: [f64; EMBEDDING_DIM],
    /// `[ln ||delta||, ln g_mean, ln eta, (epoch + 1) / epochs]`
    pub round_stats: [f64; STATS_DIM],
}

impl BranchInput {
    pub fn new(embedding: [f64; EMBEDDING_DIM], obs: &EpochObservation, epochs: usize) -> Self {
        let ln = |x: f64| libm::log(x.max(LOG_FLOOR));
        Self {
            embedding,
            round_stats: [
                ln(obs.delta_norm),
                ln(obs.mean_grad_norm),
                ln(obs.eta),
                (obs.epoch_index + 1) as f64 / epochs.max(1) as f64,
            ],
        }
    }

    pub fn features(&self) -> [f64; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        x[..EMBEDDING_DIM].copy_from_slice(&self.embedding);
        x[EMBEDDING_DIM..].copy_from_slice(&self.round_stats);
        x
    }

    fn checked_features(&self) -> Result<[f64; INPUT_DIM]> {
        let x = self.features();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFinite("branch input"))
        }
    }
}

/// Branch network `12 -> hidden (tanh) -> 1 (softplus)`.
///
/// Layout of `phi`: `W1 (hidden x 12)`, `b1 (hidden)`, `w2 (hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantityBranch {
    pub phi: ParamVector,
    pub hidden: usize,
    /// Initial step size of each branch update.
    pub lr: f64,
}

/// How a branch update went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Loss gradient was exactly zero; parameters untouched.
    Stationary,
    /// Non-finite gradient; parameters untouched.
    SkippedNonFinite,
    /// No tried step size decreased the loss; parameters untouched.
    SkippedNoDescent,
    /// Observation carries no volume information (zero gradient or update).
    SkippedNotEstimable,
}

pub fn branch_param_count(hidden: usize) -> usize {
    hidden * INPUT_DIM + 3 * hidden + 1
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl QuantityBranch {
    pub fn new(hidden: usize, lr: f64, rng: &mut SimRng) -> Result<Self> {
        Self::check_shape(hidden, lr)?;
        let mut v = Vec::with_capacity(branch_param_count(hidden));
        let b1 = 1.0 / libm::sqrt(INPUT_DIM as f64);
        v.extend((0..hidden * INPUT_DIM).map(|_| rng.uniform_range(-b1, b1)));
        v.extend(core::iter::repeat_n(0.0, hidden));
        let b2 = 1.0 / libm::sqrt(hidden as f64);
        v.extend((0..hidden).map(|_| rng.uniform_range(-b2, b2)));
        v.push(0.0);
        Ok(Self {
            phi: ParamVector::from_vec(v)?,
            hidden,
            lr,
        })
    }

    pub fn zeros(hidden: usize, lr: f64) -> Result<Self> {
        Self::check_shape(hidden, lr)?;
        Ok(Self {
            phi: ParamVector::zeros(branch_param_count(hidden)),
            hidden,
            lr,
        })
    }

    pub fn with_phi(&self, phi: ParamVector) -> Result<Self> {
        self.phi.check_dim(&phi)?;
        Ok(Self { phi, ..self.clone() })
    }

    fn check_shape(hidden: usize, lr: f64) -> Result<()> {
        if hidden == 0 {
            return Err(config_err("branch hidden width must be positive"));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(config_err("branch learning rate must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.phi.dim()
    }

    /// The branch may cost at most a tenth of the main model's parameters.
    pub fn check_overhead(&self, main_params: usize) -> Result<()> {
        if self.num_params() * 10 > main_params {
            return Err(config_err(alloc::format!(
                "branch has {} parameters, more than 10% of the model's {}",
                self.num_params(),
                main_params
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &[f64; INPUT_DIM], hidden_out: &mut [f64]) -> f64 {
        let h = self.hidden;
        let p = self.phi.as_slice();
        let (w1, rest) = p.split_at(h * INPUT_DIM);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut z = b2[0];
        for j in 0..h {
            let a: f64 = b1[j]
                + w1[j * INPUT_DIM..(j + 1) * INPUT_DIM]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>();
            hidden_out[j] = libm::tanh(a);
            z += w2[j] * hidden_out[j];
        }
        z
    }

    /// `alpha = softplus(MLP(phi; input))`, always positive.
    pub fn predict_alpha(&self, input: &BranchInput) -> Result<f64> {
        let x = input.checked_features()?;
        let mut hidden = vec![0.0; self.hidden];
        let alpha = softplus(self.pre_activation(&x, &mut hidden));
        // softplus underflows to 0 for very negative pre-activations
        Ok(alpha.max(f64::MIN_POSITIVE))
    }

    /// `alpha` and `d alpha / d phi`.
    pub fn alpha_and_grad(&self, input: &BranchInput) -> Result<(f64, Vec<f64>)> {
        let x = input.checked_features()?;
        let h = self.hidden;
        let mut hidden = vec![0.0; h];
        let z = self.pre_activation(&x, &mut hidden);
        let alpha = softplus(z).max(f64::MIN_POSITIVE);
        let dz = sigmoid(z);
        let w2 = &self.phi.as_slice()[h * INPUT_DIM + h..h * INPUT_DIM + 2 * h];
        let mut g = vec![0.0; self.num_params()];
        {
            let (gw1, rest) = g.split_at_mut(h * INPUT_DIM);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(h);
            for j in 0..h {
                gw2[j] = dz * hidden[j];
                let da = dz * w2[j] * (1.0 - hidden[j] * hidden[j]);
                gb1[j] = da;
                for (gw, xi) in gw1[j * INPUT_DIM..(j + 1) * INPUT_DIM].iter_mut().zip(&x) {
                    *gw = da * xi;
                }
            }
            gb2[0] = dz;
        }
        Ok((alpha, g))
    }

    /// Full gradient of the branch loss with respect to `phi`:
    /// `(d loss / d alpha) * (d alpha / d phi)`.
    pub fn loss_grad_phi(
        &self,
        input: &BranchInput,
        obs: &EpochObservation,
        true_volume: u64,
        batch_size: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let (alpha, mut g) = self.alpha_and_grad(input)?;
        let dl = branch_grad_alpha(obs, alpha, true_volume, batch_size)?;
        g.iter_mut().for_each(|v| *v *= dl);
        let loss = branch_loss(obs, alpha, true_volume, batch_size)?;
        Ok((loss, g))
    }

    /// Branch loss at the current parameters.
    pub fn loss(
        &self,
        input: &BranchInput,
        obs: &EpochObservation,
        true_volume: u64,
        batch_size: usize,
    ) -> Result<f64> {
        branch_loss(obs, self.predict_alpha(input)?, true_volume, batch_size)
    }

    /// One gradient step `phi <- phi - lr * dLoss/dphi` against the true
    /// volume. The step size starts at `lr` and is halved until the loss does
    /// not increase and the predicted `alpha` moves by at most a factor of
    /// [`MAX_ALPHA_RATIO`].
    ///
    /// The loss flattens out as `alpha` grows, so an unrestricted step from an
    /// overestimate can land on the plateau where the gradient vanishes; the
    /// ratio bound keeps the fit in the well-conditioned region.
    pub fn step(
        &self,
        input: &BranchInput,
        obs: &EpochObservation,
        true_volume: u64,
        batch_size: usize,
    ) -> Result<(Self, StepOutcome)> {
        let (loss0, grad) = match self.loss_grad_phi(input, obs, true_volume, batch_size) {
            Ok(v) => v,
            Err(Error::NotEstimable) => return Ok((self.clone(), StepOutcome::SkippedNotEstimable)),
            Err(e) => return Err(e),
        };
        if grad.iter().any(|g| !g.is_finite()) || !loss0.is_finite() {
            return Ok((self.clone(), StepOutcome::SkippedNonFinite));
        }
        if grad.iter().all(|&g| g == 0.0) {
            return Ok((self.clone(), StepOutcome::Stationary));
        }
        let alpha0 = self.predict_alpha(input)?;
        let mut lr = self.lr;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = self.phi.as_slice().iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            if let Ok(phi) = ParamVector::from_vec(trial) {
                let next = self.with_phi(phi)?;
                let alpha = next.predict_alpha(input)?;
                let ratio = alpha / alpha0;
                if let Ok(loss) = branch_loss(obs, alpha, true_volume, batch_size) {
                    if loss <= loss0 && (1.0 / MAX_ALPHA_RATIO..=MAX_ALPHA_RATIO).contains(&ratio) {
                        return Ok((next, StepOutcome::Applied));
                    }
                }
            }
            lr *= 0.5;
        }
        Ok((self.clone(), StepOutcome::SkippedNoDescent))
    }
}
