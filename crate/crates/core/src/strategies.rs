//! The four baseline FL strategies behind one interface.
//!
//! Each strategy only changes the local update rule and what per-client state
//! the server keeps between rounds; aggregation is shared. Formulations:
//! - FedProx: `step = -eta * (grad + mu * (theta - theta_g))`
//! - Scaffold (option II control update):
//!   `step = -eta * (grad - c_i + c)`,
//!   `c_i+ = c_i - c + (theta_g - theta_i) / (steps * eta)`,
//!   `c += (1/N) * sum over participants of (c_i+ - c_i)`
//! - Ditto: the shared model trains as FedAvg; a personal model per client
//!   trains on the same batches with `-eta * (grad_p + lambda * (theta_p - theta_g))`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::numcore::ParamVector;
use crate::{config_err, Result};

pub const DEFAULT_PROX_MU: f64 = 0.01;
pub const DEFAULT_DITTO_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    FedAvg,
    FedProx { mu: f64 },
    Scaffold,
    Ditto { lambda: f64 },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx { .. } => "fedprox",
            StrategyKind::Scaffold => "scaffold",
            StrategyKind::Ditto { .. } => "ditto",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyKind::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                Err(config_err("fedprox mu must be non-negative"))
            }
            StrategyKind::Ditto { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(config_err("ditto lambda must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

/// Server-held strategy state.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyCtx {
    FedAvg,
    FedProx {
        mu: f64,
    },
    Scaffold {
        c_global: ParamVector,
        c_local: BTreeMap<u32, ParamVector>,
    },
    Ditto {
        lambda: f64,
        personal: BTreeMap<u32, ParamVector>,
    },
}

/// What a client needs from the strategy state for one local round.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientRule {
    Plain,
    Prox {
        mu: f64,
    },
    Scaffold {
        c_global: ParamVector,
        c_local: ParamVector,
    },
    Ditto {
        lambda: f64,
        /// Personal model at the start of the round.
        personal: ParamVector,
    },
}

/// Per-client strategy state produced by a local round.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyOutput {
    None,
    Scaffold { c_local: ParamVector },
    Ditto { personal: ParamVector },
}

impl StrategyCtx {
    pub fn new(kind: StrategyKind, model_dim: usize) -> Result<Self> {
        kind.validate()?;
        Ok(match kind {
            StrategyKind::FedAvg => StrategyCtx::FedAvg,
            StrategyKind::FedProx { mu } => StrategyCtx::FedProx { mu },
            StrategyKind::Scaffold => StrategyCtx::Scaffold {
                c_global: ParamVector::zeros(model_dim),
                c_local: BTreeMap::new(),
            },
            StrategyKind::Ditto { lambda } => StrategyCtx::Ditto {
                lambda,
                personal: BTreeMap::new(),
            },
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyCtx::FedAvg => StrategyKind::FedAvg,
            StrategyCtx::FedProx { mu } => StrategyKind::FedProx { mu: *mu },
            StrategyCtx::Scaffold { .. } => StrategyKind::Scaffold,
            StrategyCtx::Ditto { lambda, .. } => StrategyKind::Ditto { lambda: *lambda },
        }
    }

    /// Rule for `client` in a round whose global model is `global_theta`.
    pub fn client_rule(&self, client: u32, global_theta: &ParamVector) -> ClientRule {
        match self {
            StrategyCtx::FedAvg => ClientRule::Plain,
            StrategyCtx::FedProx { mu } => ClientRule::Prox { mu: *mu },
            StrategyCtx::Scaffold { c_global, c_local } => ClientRule::Scaffold {
                c_global: c_global.clone(),
                c_local: c_local
                    .get(&client)
                    .cloned()
                    .unwrap_or_else(|| ParamVector::zeros(c_global.dim())),
            },
            StrategyCtx::Ditto { lambda, personal } => ClientRule::Ditto {
                lambda: *lambda,
                personal: personal.get(&client).cloned().unwrap_or_else(|| global_theta.clone()),
            },
        }
    }

    pub fn personal_model(&self, client: u32) -> Option<&ParamVector> {
        match self {
            StrategyCtx::Ditto { personal, .. } => personal.get(&client),
            _ => None,
        }
    }

    pub fn control_variate(&self, client: u32) -> Option<&ParamVector> {
        match self {
            StrategyCtx::Scaffold { c_local, .. } => c_local.get(&client),
            _ => None,
        }
    }

    /// Fold this round's client outputs into the server state. `outputs` must
    /// be in ascending client order; `num_clients` is the population size N.
    pub fn post_round(&mut self, outputs: &[(u32, StrategyOutput)], num_clients: usize) -> Result<()> {
        match self {
            StrategyCtx::FedAvg | StrategyCtx::FedProx { .. } => Ok(()),
            StrategyCtx::Scaffold { c_global, c_local } => {
                let n = num_clients.max(1) as f64;
                let mut shift = ParamVector::zeros(c_global.dim());
                let mut updated: Vec<(u32, ParamVector)> = Vec::new();
                for (id, out) in outputs {
                    if let StrategyOutput::Scaffold { c_local: new } = out {
                        let old = c_local
                            .get(id)
                            .cloned()
                            .unwrap_or_else(|| ParamVector::zeros(new.dim()));
                        shift.add_scaled(1.0 / n, &new.sub(&old)?)?;
                        updated.push((*id, new.clone()));
                    }
                }
                c_global.add_scaled(1.0, &shift)?;
                c_local.extend(updated);
                Ok(())
            }
            StrategyCtx::Ditto { personal, .. } => {
                for (id, out) in outputs {
                    if let StrategyOutput::Ditto { personal: p } = out {
                        personal.insert(*id, p.clone());
                    }
                }
                Ok(())
            }
        }
    }
}

/// Additive step for the shared model under `rule`, written into `step`.
/// `anchor` is the round's global model.
pub fn local_step(rule: &ClientRule, theta: &[f64], anchor: &[f64], grad: &[f64], eta: f64, step: &mut [f64]) {
    match rule {
        ClientRule::Plain | ClientRule::Ditto { .. } => {
            for (s, g) in step.iter_mut().zip(grad) {
                *s = -eta * g;
            }
        }
        ClientRule::Prox { mu } => prox_step(*mu, theta, anchor, grad, eta, step),
        ClientRule::Scaffold { c_global, c_local } => {
            for (((s, g), c), ci) in step
                .iter_mut()
                .zip(grad)
                .zip(c_global.as_slice())
                .zip(c_local.as_slice())
            {
                *s = -eta * (g - ci + c);
            }
        }
    }
}

/// `-eta * (grad + mu * (theta - anchor))`; used by FedProx and by Ditto's
/// personal model.
pub fn prox_step(mu: f64, theta: &[f64], anchor: &[f64], grad: &[f64], eta: f64, step: &mut [f64]) {
    if mu == 0.0 {
        for (s, g) in step.iter_mut().zip(grad) {
            *s = -eta * g;
        }
        return;
    }
    for (((s, g), t), a) in step.iter_mut().zip(grad).zip(theta).zip(anchor) {
        *s = -eta * (g + mu * (t - a));
    }
}

/// Scaffold's option-II control-variate update for one client.
pub fn scaffold_control_update(
    c_global: &ParamVector,
    c_local: &ParamVector,
    global_theta: &ParamVector,
    local_theta: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<ParamVector> {
    let drift = global_theta.sub(local_theta)?;
    let mut next = c_local.sub(c_global)?;
    next.add_scaled(1.0 / (steps as f64 * eta), &drift)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn prox_with_zero_mu_is_fedavg() {
        let theta = [0.3, -1.2, 4.0];
        let anchor = [1.0, 1.0, 1.0];
        let grad = [0.123456789, -7.5, 1e-3];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        local_step(&ClientRule::Plain, &theta, &anchor, &grad, 0.07, &mut a);
        local_step(&ClientRule::Prox { mu: 0.0 }, &theta, &anchor, &grad, 0.07, &mut b);
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn scaffold_with_zero_controls_is_fedavg() {
        let theta = [0.3, -1.2];
        let grad = [0.987654321, -3.25];
        let rule = ClientRule::Scaffold {
            c_global: ParamVector::zeros(2),
            c_local: ParamVector::zeros(2),
        };
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        local_step(&ClientRule::Plain, &theta, &theta, &grad, 0.05, &mut a);
        local_step(&rule, &theta, &theta, &grad, 0.05, &mut b);
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn scaffold_single_step_control_equals_gradient() {
        // One step: theta_i = theta_g - eta (g - c_i + c), hence
        // c_i+ = c_i - c + (g - c_i + c) = g.
        let g = pv(&[0.5, -2.0]);
        let c = pv(&[0.25, 0.5]);
        let ci = pv(&[-0.75, 1.0]);
        let theta_g = pv(&[1.0, 1.0]);
        let eta = 0.5;
        let mut step = [0.0; 2];
        let rule = ClientRule::Scaffold {
            c_global: c.clone(),
            c_local: ci.clone(),
        };
        local_step(
            &rule,
            theta_g.as_slice(),
            theta_g.as_slice(),
            g.as_slice(),
            eta,
            &mut step,
        );
        let mut theta_i = theta_g.clone();
        theta_i.add_scaled(1.0, &pv(&step)).unwrap();
        let next = scaffold_control_update(&c, &ci, &theta_g, &theta_i, 1, eta).unwrap();
        for (a, b) in next.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn post_round_moves_global_control_by_mean_shift() {
        let mut ctx = StrategyCtx::new(StrategyKind::Scaffold, 2).unwrap();
        let outputs = vec![
            (
                1,
                StrategyOutput::Scaffold {
                    c_local: pv(&[1.0, 0.0]),
                },
            ),
            (
                4,
                StrategyOutput::Scaffold {
                    c_local: pv(&[0.0, 2.0]),
                },
            ),
        ];
        ctx.post_round(&outputs, 10).unwrap();
        match &ctx {
            StrategyCtx::Scaffold { c_global, c_local } => {
                assert_eq!(c_global.as_slice(), &[0.1, 0.2]);
                assert_eq!(c_local.len(), 2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn fedavg_post_round_is_noop() {
        let mut ctx = StrategyCtx::new(StrategyKind::FedAvg, 3).unwrap();
        let before = ctx.clone();
        ctx.post_round(&[(0, StrategyOutput::None)], 5).unwrap();
        assert_eq!(ctx, before);
    }

    #[test]
    fn ditto_personal_models_persist() {
        let mut ctx = StrategyCtx::new(StrategyKind::Ditto { lambda: 0.1 }, 2).unwrap();
        ctx.post_round(
            &[(
                3,
                StrategyOutput::Ditto {
                    personal: pv(&[1.0, 2.0]),
                },
            )],
            10,
        )
        .unwrap();
        // Round in which client 3 is not sampled.
        ctx.post_round(
            &[(
                5,
                StrategyOutput::Ditto {
                    personal: pv(&[0.0, 0.0]),
                },
            )],
            10,
        )
        .unwrap();
        assert_eq!(ctx.personal_model(3), Some(&pv(&[1.0, 2.0])));
        let g = pv(&[9.0, 9.0]);
        assert_eq!(
            ctx.client_rule(3, &g),
            ClientRule::Ditto {
                lambda: 0.1,
                personal: pv(&[1.0, 2.0])
            }
        );
        assert_eq!(
            ctx.client_rule(7, &g),
            ClientRule::Ditto {
                lambda: 0.1,
                personal: g
            }
        );
    }

    #[test]
    fn negative_hyperparameters_rejected() {
        assert!(StrategyCtx::new(StrategyKind::FedProx { mu: -1.0 }, 2).is_err());
        assert!(StrategyCtx::new(StrategyKind::Ditto { lambda: f64::NAN }, 2).is_err());
    }
}
