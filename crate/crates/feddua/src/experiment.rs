//! One federated run end to end: data preparation, optional calibration,
//! and the round loop with verification, trust tracking and aggregation.

use std::collections::BTreeSet;

use feddua_core::client::{alpha_direct, client_embedding, local_round, ClientData, LocalOutcome, QuantityBranch};
use feddua_core::datagen::{dirichlet_partition, make_blobs, split_indices, Dataset, Partition};
use feddua_core::exec::Executor;
use feddua_core::numcore::{accuracy, forward_loss, stream, ModelSpec, ParamVector, SimRng};
use feddua_core::server::{
    aggregate, calibrate_prior, estimate_update_volume, verify, weight_perturbation, AlphaPrior, Calibration,
    CalibrationConfig, TrustLedger, TrustStatus, Verdict,
};
use feddua_core::strategies::StrategyCtx;
use feddua_core::Error as CoreError;
use log::{debug, info, warn};

use crate::config::{DataSource, ExperimentConfig};
use crate::csvio::load_csv;
use crate::error::{HarnessError, Result};
use crate::prior_file::PriorFile;

/// Runs work items on a dedicated rayon pool, keeping input order.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` lets rayon pick the thread count.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start thread pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }
}

/// Data and initial state shared by the real run and its calibration.
#[derive(Debug, Clone)]
pub struct Federation {
    pub dataset: Dataset,
    pub test: Dataset,
    /// Rows held back for shadow calibration.
    pub shadow_rows: Vec<usize>,
    pub partition: Partition,
    pub spec: ModelSpec,
    pub init_theta: ParamVector,
    pub init_branch: QuantityBranch,
}

/// Build the dataset, splits, client partition and initial models.
///
/// The shadow split is reserved whether or not verification is enabled so
/// that runs differing only in `feddua` see identical client shards.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Federation> {
    cfg.validate()?;
    let dataset = match &cfg.data {
        DataSource::Blobs => make_blobs(
            cfg.data_classes,
            cfg.data_dim,
            cfg.data_per_class,
            cfg.data_spread,
            &mut SimRng::derive(cfg.seed, &[stream::DATA]),
        )?,
        DataSource::Csv(path) => load_csv(path)?,
    };
    let (test_rows, train_rows) = split_indices(
        dataset.len(),
        cfg.test_fraction,
        &mut SimRng::derive(cfg.seed, &[stream::SPLIT, 0]),
    );
    let (shadow_pos, client_pos) = split_indices(
        train_rows.len(),
        cfg.calib_shadow_fraction,
        &mut SimRng::derive(cfg.seed, &[stream::SPLIT, 1]),
    );
    let shadow_rows: Vec<usize> = shadow_pos.iter().map(|&i| train_rows[i]).collect();
    let client_rows: Vec<usize> = client_pos.iter().map(|&i| train_rows[i]).collect();
    if test_rows.is_empty() {
        return Err(HarnessError::Config("test split is empty".into()));
    }
    let test = dataset.subset(&test_rows, "test")?;
    let partition = dirichlet_partition(
        &dataset,
        &client_rows,
        cfg.num_clients,
        cfg.beta,
        cfg.min_shard(),
        cfg.seed,
    )?;
    let spec = cfg.model_spec(dataset.input_dim(), dataset.num_classes());
    spec.validate()?;
    let init_theta = spec.init(&mut SimRng::derive(cfg.seed, &[stream::MODEL_INIT]));
    let init_branch = QuantityBranch::new(
        cfg.branch_hidden,
        cfg.branch_lr,
        &mut SimRng::derive(cfg.seed, &[stream::BRANCH_INIT]),
    )?;
    init_branch.check_overhead(spec.num_params())?;
    info!(
        "{} rows ({} test, {} shadow), {} clients, model {} params, branch {} params",
        dataset.len(),
        test.len(),
        shadow_rows.len(),
        cfg.num_clients,
        spec.num_params(),
        init_branch.num_params()
    );
    Ok(Federation {
        dataset,
        test,
        shadow_rows,
        partition,
        spec,
        init_theta,
        init_branch,
    })
}

/// Calibrate a prior on the shadow split for the configured strategy.
///
/// The shadow pool is split into as many pacing clients as give it the real
/// federation's mean shard size, and as many of them train per round as real
/// clients do (capped at the pacing client count).
pub fn calibrate<E: Executor>(cfg: &ExperimentConfig, fed: &Federation, exec: &E) -> Result<Calibration> {
    let client_rows: usize = fed.partition.sizes().iter().sum();
    let mean_shard = client_rows as f64 / cfg.num_clients as f64;
    let mut ccfg = CalibrationConfig {
        volumes: cfg.calib_volumes.clone(),
        rounds: cfg.rounds,
        replicas: cfg.calib_replicas,
        quantile_lo: cfg.verify_q_lo,
        quantile_hi: cfg.verify_q_hi,
        beta: cfg.beta,
        local: cfg.local_config(),
        pacing_fraction: cfg.calib_pacing_fraction,
        pacing_clients: 1,
        pacing_per_round: 1,
        seed: cfg.seed,
    };
    let (pacing_rows, _) = ccfg.pool_split(fed.shadow_rows.len());
    ccfg.pacing_clients = ((pacing_rows as f64 / mean_shard).round() as usize).max(1);
    ccfg.pacing_per_round = cfg.clients_per_round.min(ccfg.pacing_clients);
    let cal = calibrate_prior(
        &fed.spec,
        cfg.strategy_kind()?,
        &fed.dataset,
        &fed.shadow_rows,
        &fed.init_theta,
        &fed.init_branch,
        &ccfg,
        exec,
    )?;
    info!(
        "calibrated {} rounds x {} volumes",
        cal.prior.horizon(),
        cal.prior.volumes().len()
    );
    Ok(cal)
}

/// Per-client outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub client_id: u32,
    pub attacker: bool,
    pub claimed: u64,
    pub true_volume: u64,
    /// Server-side estimate from the uploaded `alpha` values.
    pub estimated: Option<u64>,
    pub verdict: Verdict,
    /// Aggregation weight (0 when dropped).
    pub weight: f64,
    /// `claimed/sum(claimed) - true/sum(true)` over this round's participants.
    pub weight_shift: f64,
    /// Uploaded per-epoch `alpha` values.
    pub alphas: Vec<f64>,
    /// Per-epoch `alpha` that reproduces the true volume exactly, when defined.
    pub exact_alphas: Vec<Option<f64>>,
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Test accuracy of the global model after this round.
    pub accuracy: f64,
    pub test_loss: f64,
    pub clients: Vec<ClientRecord>,
    /// No update was aggregated this round.
    pub skipped: bool,
    /// Clients by trust status after this round: (honest, warned, excluded).
    pub trust_counts: (usize, usize, usize),
}

/// Result of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rounds: Vec<RoundRecord>,
    pub ledger: TrustLedger,
    pub final_theta: ParamVector,
    /// Accuracy of the initial model, before any round.
    pub initial_accuracy: f64,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial_accuracy, |r| r.accuracy)
    }
}

/// Choose this round's participants.
///
/// `forced` clients take part whenever they are eligible; the remaining
/// seats are filled uniformly without replacement from the other eligible
/// clients. The result is sorted by id.
pub fn sample_clients(
    num_clients: usize,
    per_round: usize,
    forced: &[u32],
    eligible: impl Fn(u32) -> bool,
    rng: &mut SimRng,
) -> Vec<u32> {
    let forced: BTreeSet<u32> = forced.iter().copied().filter(|&id| eligible(id)).collect();
    let mut pool: Vec<u32> = (0..num_clients as u32)
        .filter(|id| eligible(*id) && !forced.contains(id))
        .collect();
    let take = per_round.saturating_sub(forced.len()).min(pool.len());
    for i in 0..take {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    let mut chosen: Vec<u32> = forced.into_iter().collect();
    chosen.extend_from_slice(&pool[..take]);
    chosen.sort_unstable();
    chosen
}

/// Prepare, calibrate (or load the prior) when verification is on, and run.
pub fn run_experiment<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<(RunOutput, Option<AlphaPrior>)> {
    let fed = prepare(cfg)?;
    let prior = if cfg.feddua && cfg.rounds > 0 {
        Some(match &cfg.calib_prior {
            Some(path) => {
                let file = PriorFile::load(path)?;
                if file.strategy != cfg.strategy_kind()?.name() {
                    return Err(HarnessError::Config(format!(
                        "prior {} was calibrated for {}, not {}",
                        path.display(),
                        file.strategy,
                        cfg.strategy
                    )));
                }
                file.prior
            }
            None => calibrate(cfg, &fed, exec)?.prior,
        })
    } else {
        None
    };
    let out = run_federation(cfg, &fed, prior.as_ref(), exec)?;
    Ok((out, prior))
}

/// The round loop. `prior` is required when verification is enabled.
pub fn run_federation<E: Executor>(
    cfg: &ExperimentConfig,
    fed: &Federation,
    prior: Option<&AlphaPrior>,
    exec: &E,
) -> Result<RunOutput> {
    cfg.validate()?;
    let prior = match (cfg.feddua, prior) {
        (true, None) if cfg.rounds > 0 => return Err(HarnessError::Config("verification needs a prior".into())),
        (_, p) => p,
    };
    let local = cfg.local_config();
    let vcfg = cfg.verify_config();
    let policy = cfg.trust_policy();
    let attackers: BTreeSet<u32> = cfg.attack_ids.iter().copied().collect();
    let forced: Vec<u32> = if cfg.attack_always_participate {
        attackers.iter().copied().collect()
    } else {
        Vec::new()
    };

    let mut theta = fed.init_theta.clone();
    let mut branch = fed.init_branch.clone();
    let mut ctx = StrategyCtx::new(cfg.strategy_kind()?, theta.dim())?;
    let mut ledger = TrustLedger::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let initial_accuracy = accuracy(&fed.spec, &theta, &fed.test)?;

    for round in 0..cfg.rounds {
        let mut rng = SimRng::derive(cfg.seed, &[stream::SAMPLING, round as u64]);
        let sampled = sample_clients(
            cfg.num_clients,
            cfg.clients_per_round,
            &forced,
            |id| !ledger.is_excluded(id),
            &mut rng,
        );
        let results = exec.map(sampled.clone(), |id| {
            let data = ClientData {
                id,
                dataset: &fed.dataset,
                indices: &fed.partition.assignments[id as usize],
                embedding: client_embedding(cfg.seed, id),
            };
            let rule = ctx.client_rule(id, &theta);
            let factor = if attackers.contains(&id) {
                cfg.attack_factor
            } else {
                1.0
            };
            let mut rng = SimRng::derive(cfg.seed, &[stream::CLIENT, id as u64, round as u64]);
            local_round(&data, &fed.spec, &theta, &branch, &rule, &local, factor, &mut rng)
        });
        let mut outcomes: Vec<LocalOutcome> = Vec::with_capacity(results.len());
        for (id, r) in sampled.iter().zip(results) {
            match r {
                Ok(o) => outcomes.push(o),
                Err(CoreError::EmptyShard(_)) => warn!("round {round}: client {id} has no data, skipped"),
                Err(e) => return Err(e.into()),
            }
        }

        let mut verdicts = Vec::with_capacity(outcomes.len());
        for o in &outcomes {
            let u = &o.update;
            let verdict = match prior {
                Some(p) if cfg.feddua => verify(u, p, round, &vcfg)?,
                _ => Verdict::accept(estimate_update_volume(u, cfg.batch_size)?.map(|v| v.round() as u64)),
            };
            if cfg.feddua
                && ledger.apply(round, u.client_id, verdict, u.claimed_volume, &policy) == TrustStatus::Excluded
            {
                debug!("round {round}: client {} excluded", u.client_id);
            }
            verdicts.push(verdict);
        }

        let updates: Vec<_> = outcomes.iter().map(|o| o.update.clone()).collect();
        let (weights, skipped) = if updates.is_empty() {
            (vec![0.0; 0], true)
        } else {
            match aggregate(&updates, &verdicts, &theta, &branch.phi) {
                Ok(agg) => {
                    let kept: BTreeSet<u32> = agg.contributions.iter().map(|c| c.client_id).collect();
                    let strategy_out: Vec<_> = outcomes
                        .iter()
                        .filter(|o| kept.contains(&o.update.client_id))
                        .map(|o| (o.update.client_id, o.strategy.clone()))
                        .collect();
                    ctx.post_round(&strategy_out, cfg.num_clients)?;
                    let weights = updates
                        .iter()
                        .map(|u| {
                            agg.contributions
                                .iter()
                                .find(|c| c.client_id == u.client_id)
                                .map_or(0.0, |c| c.weight)
                        })
                        .collect();
                    theta = agg.theta;
                    branch = branch.with_phi(agg.phi)?;
                    (weights, false)
                }
                Err(CoreError::NothingToAggregate) => (vec![0.0; updates.len()], true),
                Err(e) => return Err(e.into()),
            }
        };
        if skipped {
            warn!("round {round}: nothing to aggregate, global model unchanged");
        }

        let shifts = if outcomes.is_empty() {
            Vec::new()
        } else {
            let claimed: Vec<f64> = outcomes.iter().map(|o| o.update.claimed_volume as f64).collect();
            let truth: Vec<f64> = outcomes.iter().map(|o| o.true_volume as f64).collect();
            weight_perturbation(&claimed, &truth)?
        };
        let clients = outcomes
            .iter()
            .zip(&verdicts)
            .zip(weights.iter().zip(&shifts))
            .map(|((o, v), (&w, &dw))| {
                let u = &o.update;
                ClientRecord {
                    client_id: u.client_id,
                    attacker: attackers.contains(&u.client_id),
                    claimed: u.claimed_volume,
                    true_volume: o.true_volume,
                    estimated: v.estimated_volume,
                    verdict: *v,
                    weight: w,
                    weight_shift: dw,
                    alphas: u.alphas.clone(),
                    exact_alphas: u
                        .observations
                        .iter()
                        .map(|obs| alpha_direct(obs, o.true_volume, cfg.batch_size).ok())
                        .collect(),
                }
            })
            .collect();

        let acc = accuracy(&fed.spec, &theta, &fed.test)?;
        let loss = forward_loss(&fed.spec, &theta, &fed.test.as_batch())?;
        let (_, warned, excluded) = ledger.status_counts();
        let trust_counts = (cfg.num_clients - warned - excluded, warned, excluded);
        debug!("round {round}: accuracy {acc:.4}, loss {loss:.4}, trust {trust_counts:?}");
        rounds.push(RoundRecord {
            round,
            accuracy: acc,
            test_loss: loss,
            clients,
            skipped,
            trust_counts,
        });
    }
    info!(
        "finished {} rounds, final accuracy {:.4}",
        rounds.len(),
        rounds.last().map_or(initial_accuracy, |r| r.accuracy)
    );
    Ok(RunOutput {
        rounds,
        ledger,
        final_theta: theta,
        initial_accuracy,
    })
}
