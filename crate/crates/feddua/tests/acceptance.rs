//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the default blob task (100 clients, 10 per round, beta 0.5, one 3x
//! attacker, 50 rounds) over three seeds and four strategies. Any FAIL makes
//! the process exit non-zero. When the bands of criterion 9 overlap, detection
//! (criterion 4) is judged on the consistency check alone.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use feddua::{
    calibrate, emit_outputs, prepare, run_experiment, run_federation, ExperimentConfig, RayonExecutor, RunOutput,
};
use feddua_core::client::{
    alpha_direct, branch_grad_alpha, branch_loss, estimate_volume, BranchInput, EpochObservation, QuantityBranch,
};
use feddua_core::numcore::{backward, forward_loss, Batch, ModelSpec, ParamVector, SimRng};
use feddua_core::server::{weight_perturbation, AlphaPrior};

const SEEDS: [u64; 3] = [1, 2, 3];
const STRATEGIES: [&str; 4] = ["fedavg", "fedprox", "scaffold", "ditto"];
const DETECTION_FROM_ROUND: usize = 10;

#[derive(Default)]
struct Verdicts {
    lines: BTreeMap<u8, (bool, String)>,
}

impl Verdicts {
    fn report(&mut self, id: u8, pass: bool, detail: String) {
        self.lines.insert(id, (pass, detail));
    }

    /// Print in criterion order; true when any criterion failed.
    fn print(&self) -> bool {
        for (id, (pass, detail)) in &self.lines {
            println!("criterion {id}: {} | {detail}", if *pass { "PASS" } else { "FAIL" });
        }
        self.lines.values().any(|(pass, _)| !pass)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_obs(rng: &mut SimRng) -> EpochObservation {
    EpochObservation {
        delta_norm: rng.uniform_range(0.01, 5.0),
        mean_grad_norm: rng.uniform_range(0.01, 3.0),
        eta: rng.uniform_range(0.005, 0.5),
        epoch_index: rng.below(4),
    }
}

/// Worst central-difference relative error of the model backward pass.
fn model_fd_error(spec: &ModelSpec, probes: usize, rng: &mut SimRng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let base = spec.init(rng);
        let theta = ParamVector::from_vec(base.as_slice().iter().map(|t| t + 0.3 * rng.normal()).collect()).unwrap();
        let x: Vec<f64> = (0..6 * spec.input_dim).map(|_| rng.normal()).collect();
        let y: Vec<usize> = (0..6).map(|_| rng.below(spec.num_classes)).collect();
        let batch = Batch::new(&x, &y, spec.input_dim).unwrap();
        let grad = backward(spec, &theta, &batch).unwrap();
        let k = rng.below(theta.dim());
        let h = 1e-5;
        let at = |d: f64| {
            let mut t = theta.as_slice().to_vec();
            t[k] += d;
            forward_loss(spec, &ParamVector::from_vec(t).unwrap(), &batch).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let analytic = grad.as_slice()[k];
        if fd.abs() < 1e-7 && analytic.abs() < 1e-7 {
            continue;
        }
        worst = worst.max(rel_err(analytic, fd));
    }
    worst
}

fn criterion_gradients(v: &mut Verdicts) {
    let start = Instant::now();
    let mut rng = SimRng::new(101);
    let logistic = model_fd_error(&ModelSpec::logistic(16, 10), 100, &mut rng);
    let mlp = model_fd_error(&ModelSpec::mlp(16, 48, 10), 100, &mut rng);

    let mut alpha_worst = 0.0f64;
    for _ in 0..100 {
        let obs = random_obs(&mut rng);
        let volume = 1 + rng.below(2000) as u64;
        let alpha = rng.uniform_range(0.05, 3.0);
        let h = 1e-6 * alpha;
        let fd = (branch_loss(&obs, alpha + h, volume, 8).unwrap() - branch_loss(&obs, alpha - h, volume, 8).unwrap())
            / (2.0 * h);
        alpha_worst = alpha_worst.max(rel_err(branch_grad_alpha(&obs, alpha, volume, 8).unwrap(), fd));
    }

    let mut phi_worst = 0.0f64;
    for _ in 0..100 {
        let branch = QuantityBranch::new(8, 0.01, &mut rng).unwrap();
        let obs = random_obs(&mut rng);
        let input = BranchInput::new(core::array::from_fn(|_| rng.uniform_range(-1.0, 1.0)), &obs, 2);
        let volume = 8 + rng.below(500) as u64;
        let (_, grad) = branch.loss_grad_phi(&input, &obs, volume, 8).unwrap();
        let k = rng.below(grad.len());
        let h = 1e-6;
        let at = |d: f64| {
            let mut phi = branch.phi.as_slice().to_vec();
            phi[k] += d;
            branch
                .with_phi(ParamVector::from_vec(phi).unwrap())
                .unwrap()
                .loss(&input, &obs, volume, 8)
                .unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        if fd.abs() < 1e-7 && grad[k].abs() < 1e-7 {
            continue;
        }
        phi_worst = phi_worst.max(rel_err(grad[k], fd));
    }

    let elapsed = start.elapsed();
    let worst = logistic.max(mlp).max(alpha_worst).max(phi_worst);
    v.report(
        1,
        worst <= 1e-4 && elapsed <= Duration::from_secs(10),
        format!(
            "worst relative error {worst:.2e} (logistic {logistic:.1e}, mlp {mlp:.1e}, d/dalpha {alpha_worst:.1e}, \
             d/dphi {phi_worst:.1e}) over 4x100 probes in {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_inverses(v: &mut Verdicts) {
    let start = Instant::now();
    let mut rng = SimRng::new(202);
    let mut worst = 0.0f64;
    let mut nonzero_losses = 0;
    for _ in 0..1000 {
        let obs = random_obs(&mut rng);
        let batch = 1 + rng.below(64);
        let volume = 1 + rng.below(100_000) as u64;
        let alpha = alpha_direct(&obs, volume, batch).unwrap();
        let back = estimate_volume(&obs, alpha, batch).unwrap();
        worst = worst.max((back - volume as f64).abs() / volume as f64);
        if branch_loss(&obs, alpha, volume, batch).unwrap() != 0.0 {
            nonzero_losses += 1;
        }
    }
    let elapsed = start.elapsed();
    v.report(
        2,
        worst <= 1e-12 && nonzero_losses == 0 && elapsed <= Duration::from_secs(1),
        format!(
            "worst round-trip error {worst:.1e}, {nonzero_losses} non-zero losses at the direct alpha, \
             1000 observations in {:.3}s",
            elapsed.as_secs_f64()
        ),
    );
}

fn base_config(strategy: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        strategy: strategy.to_string(),
        seed,
        ..ExperimentConfig::default()
    }
}

/// Runs for one (strategy, seed).
struct Trial {
    strategy: &'static str,
    seed: u64,
    prior: AlphaPrior,
    on: RunOutput,
    off: RunOutput,
    honest: RunOutput,
    /// FedDua on with exclusion disabled, so the attacker keeps taking part.
    detection: Option<RunOutput>,
    calibration_time: Duration,
    on_time: Duration,
    total_time: Duration,
}

fn run_trial(strategy: &'static str, seed: u64, exec: &RayonExecutor) -> Trial {
    let start = Instant::now();
    let cfg = base_config(strategy, seed);
    let fed = prepare(&cfg).unwrap();
    let prior = calibrate(&cfg, &fed, exec).unwrap().prior;
    let calibration_time = start.elapsed();
    let on = run_federation(&cfg, &fed, Some(&prior), exec).unwrap();
    let on_time = start.elapsed();

    let mut off_cfg = cfg.clone();
    off_cfg.feddua = false;
    let off = run_federation(&off_cfg, &fed, None, exec).unwrap();

    let mut honest_cfg = off_cfg.clone();
    honest_cfg.attack_ids.clear();
    let honest_fed = prepare(&honest_cfg).unwrap();
    let honest = run_federation(&honest_cfg, &honest_fed, None, exec).unwrap();
    let total_time = start.elapsed();

    let detection = (strategy == "fedavg").then(|| {
        let mut det_cfg = cfg.clone();
        det_cfg.trust_w_exclude = 0;
        run_federation(&det_cfg, &fed, Some(&prior), exec).unwrap()
    });
    eprintln!(
        "  {strategy} seed {seed}: calibration {:.1}s, trial {:.1}s, accuracy on {:.4} off {:.4} honest {:.4}",
        calibration_time.as_secs_f64(),
        total_time.as_secs_f64(),
        on.final_accuracy(),
        off.final_accuracy(),
        honest.final_accuracy()
    );
    Trial {
        strategy,
        seed,
        prior,
        on,
        off,
        honest,
        detection,
        calibration_time,
        on_time,
        total_time,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn criterion_estimation(v: &mut Verdicts, trials: &[Trial]) {
    let mut per_seed = Vec::new();
    let mut pass = true;
    for t in trials.iter().filter(|t| t.strategy == "fedavg") {
        let errors: Vec<f64> =
            t.on.rounds
                .iter()
                .filter(|r| r.round >= DETECTION_FROM_ROUND)
                .flat_map(|r| &r.clients)
                .filter(|c| !c.attacker)
                .filter_map(|c| {
                    c.estimated
                        .map(|e| (e as f64 - c.true_volume as f64).abs() / c.true_volume as f64)
                })
                .collect();
        let m = median(errors.clone());
        pass &= m <= 0.20 && t.on_time <= Duration::from_secs(120);
        per_seed.push(format!(
            "seed {} {:.2}% of {} in {:.0}s",
            t.seed,
            100.0 * m,
            errors.len(),
            t.on_time.as_secs_f64()
        ));
    }
    v.report(
        3,
        pass,
        format!(
            "median relative error, honest clients from round 10: {}",
            per_seed.join("; ")
        ),
    );
}

/// Flag tallies for one rule: (attacker flagged, attacker sampled, honest flagged, honest sampled).
#[derive(Default)]
struct Tally {
    attacker_flags: usize,
    attacker_samples: usize,
    honest_flags: usize,
    honest_samples: usize,
}

impl Tally {
    fn detection_rate(&self) -> f64 {
        self.attacker_flags as f64 / self.attacker_samples.max(1) as f64
    }
    fn false_flag_rate(&self) -> f64 {
        self.honest_flags as f64 / self.honest_samples.max(1) as f64
    }
    fn passes(&self) -> bool {
        self.attacker_samples > 0 && self.detection_rate() >= 0.9 && self.false_flag_rate() <= 0.05
    }
    fn describe(&self) -> String {
        format!(
            "attacker {}/{} = {:.1}%, honest {}/{} = {:.2}%",
            self.attacker_flags,
            self.attacker_samples,
            100.0 * self.detection_rate(),
            self.honest_flags,
            self.honest_samples,
            100.0 * self.false_flag_rate()
        )
    }
}

fn criterion_detection(v: &mut Verdicts, trials: &[Trial], bands_separate: bool) {
    let tau = ExperimentConfig::default().verify_tau;
    let mut full = Tally::default();
    let mut consistency = Tally::default();
    for t in trials {
        let Some(run) = &t.detection else { continue };
        for r in &run.rounds {
            for c in &r.clients {
                // recomputed from the logged claim and estimate
                let inconsistent = match c.estimated {
                    Some(e) => (e as f64 - c.claimed as f64).abs() / c.claimed as f64 > tau,
                    None => true,
                };
                if c.attacker {
                    if r.round >= DETECTION_FROM_ROUND {
                        full.attacker_samples += 1;
                        consistency.attacker_samples += 1;
                        full.attacker_flags += usize::from(c.verdict.is_flag());
                        consistency.attacker_flags += usize::from(inconsistent);
                    }
                } else {
                    full.honest_samples += 1;
                    consistency.honest_samples += 1;
                    full.honest_flags += usize::from(c.verdict.is_flag());
                    consistency.honest_flags += usize::from(inconsistent);
                }
            }
        }
    }
    let (judged, rule) = if bands_separate {
        (&full, "band and consistency checks")
    } else {
        (&consistency, "consistency check alone (bands not separable)")
    };
    v.report(
        4,
        judged.passes(),
        format!(
            "judged on {rule}: {}; full verifier: {}",
            judged.describe(),
            full.describe()
        ),
    );
}

fn criterion_accuracy(v: &mut Verdicts, trials: &[Trial]) {
    let mut pass = true;
    let mut parts = Vec::new();
    for strategy in STRATEGIES {
        let rows: Vec<&Trial> = trials.iter().filter(|t| t.strategy == strategy).collect();
        let on = median(rows.iter().map(|t| t.on.final_accuracy()).collect());
        let off = median(rows.iter().map(|t| t.off.final_accuracy()).collect());
        let honest = median(rows.iter().map(|t| t.honest.final_accuracy()).collect());
        let slowest = rows.iter().map(|t| t.total_time).max().unwrap();
        let ok = on >= off + 0.01 && (on - honest).abs() <= 0.02 && slowest <= Duration::from_secs(300);
        pass &= ok;
        parts.push(format!(
            "{strategy} {} on {:.2} off {:.2} honest {:.2}, attack cost {:+.2} (slowest trial {:.0}s)",
            if ok { "ok" } else { "MISS" },
            100.0 * on,
            100.0 * off,
            100.0 * honest,
            100.0 * (honest - off),
            slowest.as_secs_f64()
        ));
    }
    v.report(
        5,
        pass,
        format!("median final accuracy over 3 seeds, %: {}", parts.join("; ")),
    );
}

fn criterion_weight_shift(v: &mut Verdicts, trials: &[Trial]) {
    let fixture = weight_perturbation(&[3.0, 1.0], &[1.0, 1.0]).unwrap();
    let fixture_ok = fixture == vec![0.25, -0.25];

    // every logged shift against the same formula recomputed by hand
    let mut logged = 0usize;
    let mut worst = 0.0f64;
    for t in trials {
        for r in &t.on.rounds {
            let claimed: f64 = r.clients.iter().map(|c| c.claimed as f64).sum();
            let truth: f64 = r.clients.iter().map(|c| c.true_volume as f64).sum();
            for c in &r.clients {
                let by_hand = c.claimed as f64 / claimed - c.true_volume as f64 / truth;
                worst = worst.max((c.weight_shift - by_hand).abs());
                logged += 1;
            }
        }
    }
    v.report(
        6,
        fixture_ok && worst <= 1e-15,
        format!(
            "fixture claimed [3,1] true [1,1] gives {fixture:?}; {logged} logged shifts, worst deviation {worst:.1e}"
        ),
    );
}

fn criterion_overhead(v: &mut Verdicts) {
    let mut rows = Vec::new();
    let mut pass = true;
    for strategy in STRATEGIES {
        let cfg = base_config(strategy, 1);
        match prepare(&cfg) {
            Ok(fed) => {
                let (branch, model) = (fed.init_branch.num_params(), fed.spec.num_params());
                pass &= branch * 10 <= model;
                rows.push(format!("{strategy} {branch}/{model}"));
            }
            Err(e) => {
                pass = false;
                rows.push(format!("{strategy} failed: {e}"));
            }
        }
    }
    let mut tiny = base_config("fedavg", 1);
    tiny.model = feddua::ModelChoice::Logistic;
    tiny.data_dim = 2;
    tiny.data_classes = 2;
    let refused = matches!(prepare(&tiny), Err(e) if e.is_config());
    v.report(
        7,
        pass && refused,
        format!(
            "branch/model parameters: {}; oversized branch refused at startup: {refused}",
            rows.join(", ")
        ),
    );
}

fn criterion_determinism(v: &mut Verdicts, reference: &Trial) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = base_config(reference.strategy, reference.seed);
    emit_outputs(&tmp.path().join("reference"), &cfg, &reference.on).unwrap();
    let mut files = vec![fs::read(tmp.path().join("reference/metrics.csv")).unwrap()];
    for threads in [1, 8] {
        let exec = RayonExecutor::new(threads).unwrap();
        let (out, _) = run_experiment(&cfg, &exec).unwrap();
        let dir = tmp.path().join(format!("threads{threads}"));
        emit_outputs(&dir, &cfg, &out).unwrap();
        files.push(fs::read(dir.join("metrics.csv")).unwrap());
    }
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    v.report(
        8,
        identical,
        format!(
            "metrics.csv of {} seed {} from the shared pool, --threads 1 and --threads 8: {} ({} bytes)",
            reference.strategy,
            reference.seed,
            if identical { "byte-identical" } else { "differ" },
            files[0].len()
        ),
    );
}

/// Share of (round, v) cells whose bands for `v` and `3v` are disjoint.
fn band_separation(prior: &AlphaPrior) -> (usize, usize) {
    let top = *prior.volumes().last().unwrap();
    let mut cells = 0;
    let mut disjoint = 0;
    for round in 0..=prior.horizon() {
        for &vol in prior.volumes().iter().filter(|&&vol| 3 * vol <= top) {
            cells += 1;
            disjoint += usize::from(prior.lookup(round, vol).is_disjoint(&prior.lookup(round, 3 * vol)));
        }
    }
    (disjoint, cells)
}

fn criterion_bands(v: &mut Verdicts, trials: &[Trial]) -> bool {
    let (mut disjoint, mut cells) = (0, 0);
    let mut per_seed = Vec::new();
    for t in trials.iter().filter(|t| t.strategy == "fedavg") {
        let (d, c) = band_separation(&t.prior);
        per_seed.push(format!("seed {} {d}/{c}", t.seed));
        disjoint += d;
        cells += c;
    }
    let share = disjoint as f64 / cells.max(1) as f64;
    let pass = share >= 0.8;
    v.report(
        9,
        pass,
        format!(
            "bands for v and 3v disjoint in {:.1}% of (round, v) cells ({}){}",
            100.0 * share,
            per_seed.join(", "),
            if pass {
                ""
            } else {
                "; detection falls back to the consistency check"
            }
        ),
    );
    pass
}

fn main() -> ExitCode {
    let mut v = Verdicts::default();
    criterion_gradients(&mut v);
    criterion_inverses(&mut v);
    criterion_overhead(&mut v);

    let exec = RayonExecutor::new(0).unwrap();
    let mut trials = Vec::new();
    for strategy in STRATEGIES {
        for seed in SEEDS {
            trials.push(run_trial(strategy, seed, &exec));
        }
    }
    let calibration: f64 = trials.iter().map(|t| t.calibration_time.as_secs_f64()).sum();
    eprintln!("  {} trials, {calibration:.0}s spent calibrating", trials.len());

    criterion_estimation(&mut v, &trials);
    let bands_separate = criterion_bands(&mut v, &trials);
    criterion_detection(&mut v, &trials, bands_separate);
    criterion_accuracy(&mut v, &trials);
    criterion_weight_shift(&mut v, &trials);
    criterion_determinism(&mut v, &trials[0]);

    if v.print() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
