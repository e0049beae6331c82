//! Experiment configuration: a flat `key = value` text format with `#`
//! comments. Every key has a default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use feddua_core::client::LocalConfig;
use feddua_core::numcore::ModelSpec;
use feddua_core::server::{TrustPolicy, VerifyConfig};
use feddua_core::strategies::{StrategyKind, DEFAULT_DITTO_LAMBDA, DEFAULT_PROX_MU};

use crate::error::{HarnessError, Result};

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs,
    Csv(PathBuf),
}

/// Main model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Logistic,
    Mlp,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    /// Dirichlet concentration of the label skew.
    pub beta: f64,
    /// Minimum shard size; `None` means twice the batch size.
    pub min_samples: Option<usize>,
    pub test_fraction: f64,

    pub strategy: String,
    pub prox_mu: f64,
    pub ditto_lambda: f64,

    pub model: ModelChoice,
    pub model_hidden: usize,

    pub data: DataSource,
    pub data_classes: usize,
    pub data_dim: usize,
    pub data_per_class: usize,
    pub data_spread: f64,

    /// Verification and trust tracking on or off.
    pub feddua: bool,
    pub attack_ids: Vec<u32>,
    pub attack_factor: f64,
    /// Misreporting clients take part in every round they are not excluded.
    pub attack_always_participate: bool,

    pub verify_tau: f64,
    pub verify_q_lo: f64,
    pub verify_q_hi: f64,
    pub trust_w_exclude: u32,
    pub trust_w_clear: u32,

    pub branch_hidden: usize,
    pub branch_lr: f64,
    pub branch_steps: usize,

    pub calib_volumes: Vec<u64>,
    pub calib_replicas: usize,
    /// Fraction of the training pool held back for shadow calibration.
    pub calib_shadow_fraction: f64,
    /// Share of the shadow split that drives the shadow global model. At 1
    /// the probes draw from the same rows.
    pub calib_pacing_fraction: f64,
    /// Precomputed prior file; calibrated on the fly when absent.
    pub calib_prior: Option<PathBuf>,

    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            num_clients: 100,
            clients_per_round: 10,
            rounds: 50,
            epochs: 2,
            batch_size: 8,
            eta: 0.1,
            beta: 0.5,
            min_samples: None,
            test_fraction: 0.2,
            strategy: "fedavg".into(),
            prox_mu: DEFAULT_PROX_MU,
            ditto_lambda: DEFAULT_DITTO_LAMBDA,
            model: ModelChoice::Mlp,
            model_hidden: 48,
            data: DataSource::Blobs,
            data_classes: 10,
            data_dim: 16,
            data_per_class: 700,
            data_spread: 0.35,
            feddua: true,
            attack_ids: vec![0],
            attack_factor: 3.0,
            attack_always_participate: true,
            verify_tau: 0.5,
            verify_q_lo: 0.005,
            verify_q_hi: 0.995,
            trust_w_exclude: 3,
            trust_w_clear: 2,
            branch_hidden: 8,
            branch_lr: 0.01,
            branch_steps: 5,
            calib_volumes: vec![16, 32, 64, 128, 256],
            calib_replicas: 100,
            calib_shadow_fraction: 0.1,
            calib_pacing_fraction: 1.0,
            calib_prior: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected on/off, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    if xs.is_empty() {
        return "none".into();
    }
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl ExperimentConfig {
    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.apply_assignment(line)
                .map_err(|e| HarnessError::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply one `key=value` assignment (as given to `--set`).
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("expected key = value, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    /// Set one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "num_clients" => self.num_clients = parse_num(key, value)?,
            "clients_per_round" => self.clients_per_round = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "min_samples" => {
                self.min_samples = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "strategy" => self.strategy = value.to_ascii_lowercase(),
            "fedprox.mu" => self.prox_mu = parse_num(key, value)?,
            "ditto.lambda" => self.ditto_lambda = parse_num(key, value)?,
            "model" => {
                self.model = match value {
                    "mlp" => ModelChoice::Mlp,
                    "logreg" => ModelChoice::Logistic,
                    _ => return Err(HarnessError::Config(format!("model: unknown {value:?}"))),
                }
            }
            "model.hidden" => self.model_hidden = parse_num(key, value)?,
            "data.source" => {
                self.data = match value {
                    "blobs" => DataSource::Blobs,
                    "csv" => match &self.data {
                        DataSource::Csv(p) => DataSource::Csv(p.clone()),
                        DataSource::Blobs => DataSource::Csv(PathBuf::new()),
                    },
                    _ => return Err(HarnessError::Config(format!("data.source: unknown {value:?}"))),
                }
            }
            "data.csv" => self.data = DataSource::Csv(PathBuf::from(value)),
            "data.classes" => self.data_classes = parse_num(key, value)?,
            "data.dim" => self.data_dim = parse_num(key, value)?,
            "data.per_class" => self.data_per_class = parse_num(key, value)?,
            "data.spread" => self.data_spread = parse_num(key, value)?,
            "feddua" => self.feddua = parse_bool(key, value)?,
            "attack.ids" => self.attack_ids = parse_list(key, value)?,
            "attack.factor" => self.attack_factor = parse_num(key, value)?,
            "attack.always_participate" => self.attack_always_participate = parse_bool(key, value)?,
            "verify.tau" => self.verify_tau = parse_num(key, value)?,
            "verify.q_lo" => self.verify_q_lo = parse_num(key, value)?,
            "verify.q_hi" => self.verify_q_hi = parse_num(key, value)?,
            "trust.w_exclude" => self.trust_w_exclude = parse_num(key, value)?,
            "trust.w_clear" => self.trust_w_clear = parse_num(key, value)?,
            "branch.hidden" => self.branch_hidden = parse_num(key, value)?,
            "branch.lr" => self.branch_lr = parse_num(key, value)?,
            "branch.steps" => self.branch_steps = parse_num(key, value)?,
            "calib.volumes" => self.calib_volumes = parse_list(key, value)?,
            "calib.replicas" => self.calib_replicas = parse_num(key, value)?,
            "calib.shadow_fraction" => self.calib_shadow_fraction = parse_num(key, value)?,
            "calib.pacing_fraction" => self.calib_pacing_fraction = parse_num(key, value)?,
            "calib.prior" => {
                self.calib_prior = match value {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "out" => self.out = PathBuf::from(value),
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("num_clients", self.num_clients.to_string());
        kv("clients_per_round", self.clients_per_round.to_string());
        kv("rounds", self.rounds.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("eta", self.eta.to_string());
        kv("beta", self.beta.to_string());
        kv(
            "min_samples",
            self.min_samples.map_or_else(|| "auto".into(), |m| m.to_string()),
        );
        kv("test_fraction", self.test_fraction.to_string());
        kv("strategy", self.strategy.clone());
        kv("fedprox.mu", self.prox_mu.to_string());
        kv("ditto.lambda", self.ditto_lambda.to_string());
        kv(
            "model",
            match self.model {
                ModelChoice::Mlp => "mlp",
                ModelChoice::Logistic => "logreg",
            }
            .into(),
        );
        kv("model.hidden", self.model_hidden.to_string());
        match &self.data {
            DataSource::Blobs => kv("data.source", "blobs".into()),
            DataSource::Csv(p) => {
                kv("data.source", "csv".into());
                kv("data.csv", p.display().to_string());
            }
        }
        kv("data.classes", self.data_classes.to_string());
        kv("data.dim", self.data_dim.to_string());
        kv("data.per_class", self.data_per_class.to_string());
        kv("data.spread", self.data_spread.to_string());
        kv("feddua", on_off(self.feddua).into());
        kv("attack.ids", join(&self.attack_ids));
        kv("attack.factor", self.attack_factor.to_string());
        kv(
            "attack.always_participate",
            on_off(self.attack_always_participate).into(),
        );
        kv("verify.tau", self.verify_tau.to_string());
        kv("verify.q_lo", self.verify_q_lo.to_string());
        kv("verify.q_hi", self.verify_q_hi.to_string());
        kv("trust.w_exclude", self.trust_w_exclude.to_string());
        kv("trust.w_clear", self.trust_w_clear.to_string());
        kv("branch.hidden", self.branch_hidden.to_string());
        kv("branch.lr", self.branch_lr.to_string());
        kv("branch.steps", self.branch_steps.to_string());
        kv("calib.volumes", join(&self.calib_volumes));
        kv("calib.replicas", self.calib_replicas.to_string());
        kv("calib.shadow_fraction", self.calib_shadow_fraction.to_string());
        kv("calib.pacing_fraction", self.calib_pacing_fraction.to_string());
        kv(
            "calib.prior",
            self.calib_prior
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
        );
        kv("out", self.out.display().to_string());
        s
    }

    pub fn strategy_kind(&self) -> Result<StrategyKind> {
        let kind = match self.strategy.as_str() {
            "fedavg" => StrategyKind::FedAvg,
            "fedprox" => StrategyKind::FedProx { mu: self.prox_mu },
            "scaffold" => StrategyKind::Scaffold,
            "ditto" => StrategyKind::Ditto {
                lambda: self.ditto_lambda,
            },
            other => return Err(HarnessError::Config(format!("strategy: unknown {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn local_config(&self) -> LocalConfig {
        LocalConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            eta: self.eta,
            branch_steps: self.branch_steps,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            tau: self.verify_tau,
            batch_size: self.batch_size,
        }
    }

    pub fn trust_policy(&self) -> TrustPolicy {
        TrustPolicy {
            w_exclude: self.trust_w_exclude,
            w_clear: self.trust_w_clear,
        }
    }

    pub fn min_shard(&self) -> usize {
        self.min_samples.unwrap_or(2 * self.batch_size)
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model {
            ModelChoice::Mlp => ModelSpec::mlp(input_dim, self.model_hidden, num_classes),
            ModelChoice::Logistic => ModelSpec::logistic(input_dim, num_classes),
        }
    }

    /// Checks that do not depend on the loaded data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1");
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return bad("clients_per_round must be in 1..=num_clients");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.calib_shadow_fraction) {
            return bad("calib.shadow_fraction must be in [0, 1)");
        }
        if !(self.attack_factor > 0.0 && self.attack_factor.is_finite()) {
            return bad("attack.factor must be positive");
        }
        if let Some(id) = self.attack_ids.iter().find(|&&id| id as usize >= self.num_clients) {
            return Err(HarnessError::Config(format!("attack.ids: client {id} does not exist")));
        }
        if !(self.verify_tau > 0.0 && self.verify_tau.is_finite()) {
            return bad("verify.tau must be positive");
        }
        if !(0.0 <= self.verify_q_lo && self.verify_q_lo < self.verify_q_hi && self.verify_q_hi <= 1.0) {
            return bad("verify quantiles must satisfy 0 <= q_lo < q_hi <= 1");
        }
        if !(self.branch_lr > 0.0 && self.branch_lr.is_finite()) {
            return bad("branch.lr must be positive");
        }
        if self.branch_hidden == 0 {
            return bad("branch.hidden must be at least 1");
        }
        if self.model == ModelChoice::Mlp && self.model_hidden == 0 {
            return bad("model.hidden must be at least 1");
        }
        if matches!(&self.data, DataSource::Csv(p) if p.as_os_str().is_empty()) {
            return bad("data.source = csv needs data.csv");
        }
        self.strategy_kind()?;
        self.local_config().validate()?;
        Ok(())
    }
}

fn strip(e: HarnessError) -> String {
    match e {
        HarnessError::Config(m) => m,
        other => other.to_string(),
    }
}
