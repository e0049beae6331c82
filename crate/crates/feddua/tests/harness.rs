//! End-to-end checks of the harness on a small federation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use feddua::csvio::{load_csv, write_csv};
use feddua::verdict_log::check_log;
use feddua::{
    calibrate, emit_outputs, prepare, read_metrics, run_experiment, sample_clients, ExperimentConfig, HarnessError,
    RayonExecutor,
};
use feddua_core::datagen::make_blobs;
use feddua_core::numcore::SimRng;
use feddua_core::server::quantile;

const SMALL: &str = "\
# small federation used across these tests
seed = 4
num_clients = 12
clients_per_round = 4
rounds = 4
data.per_class = 60
test_fraction = 0.2
calib.shadow_fraction = 0.3
calib.volumes = 8,16,32
calib.replicas = 20
attack.ids = 2
";

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL).unwrap()
}

fn run_to(cfg: &ExperimentConfig, threads: usize, dir: &Path) {
    let exec = RayonExecutor::new(threads).unwrap();
    let (out, _) = run_experiment(cfg, &exec).unwrap();
    emit_outputs(dir, cfg, &out).unwrap();
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    run_to(&cfg, 1, &tmp.path().join("a"));
    run_to(&cfg, 8, &tmp.path().join("b"));
    for name in ["metrics.csv", "verdicts.log", "accuracy_curve.tsv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn resolved_config_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.feddua = false;
    run_to(&cfg, 1, &tmp.path().join("first"));
    let echoed = ExperimentConfig::load(&tmp.path().join("first/config.resolved")).unwrap();
    assert_eq!(echoed, cfg);
    run_to(&echoed, 1, &tmp.path().join("replay"));
    assert_eq!(
        fs::read(tmp.path().join("first/metrics.csv")).unwrap(),
        fs::read(tmp.path().join("replay/metrics.csv")).unwrap()
    );
}

#[test]
fn metrics_and_log_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    run_to(&cfg, 1, tmp.path());
    let rows = read_metrics(&tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), cfg.rounds);
    let text = fs::read_to_string(tmp.path().join("verdicts.log")).unwrap();
    let report = check_log(&text, &tmp.path().join("verdicts.log")).unwrap();
    assert!(report.violations.is_empty(), "{:?}", report.violations);
    let verdicts: usize = rows.iter().map(|r| r.accepted + r.flagged).sum();
    assert_eq!(verdicts, report.events);
    for r in &rows {
        assert_eq!(r.honest + r.warned + r.excluded, cfg.num_clients);
        assert!(r.participants <= cfg.clients_per_round);
    }
}

#[test]
fn zero_rounds_writes_headers_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.rounds = 0;
    run_to(&cfg, 1, tmp.path());
    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let log = fs::read_to_string(tmp.path().join("verdicts.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn uniform_sampling_frequencies() {
    let (n, k, draws) = (20usize, 5usize, 10_000usize);
    let mut rng = SimRng::new(11);
    let mut hits = vec![0usize; n];
    for _ in 0..draws {
        let chosen = sample_clients(n, k, &[], |_| true, &mut rng);
        assert_eq!(chosen.len(), k);
        assert_eq!(chosen.iter().collect::<BTreeSet<_>>().len(), k);
        chosen.iter().for_each(|&c| hits[c as usize] += 1);
    }
    let p = k as f64 / n as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (id, &h) in hits.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 3.0 * sd + 1.0, "client {id}: {h} vs {mean}");
    }
}

#[test]
fn ineligible_clients_are_never_sampled() {
    let mut rng = SimRng::new(2);
    for _ in 0..500 {
        let chosen = sample_clients(10, 6, &[3, 4], |id| id % 4 != 0, &mut rng);
        assert!(chosen.iter().all(|id| id % 4 != 0));
        assert!(chosen.contains(&3));
        assert!(!chosen.contains(&4));
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_blobs(3, 5, 7, 0.4, &mut SimRng::new(9)).unwrap();
    let path = tmp.path().join("blobs.csv");
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.labels(), ds.labels());
}

#[test]
fn csv_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    let mut text = String::from("f0,f1,label\n");
    for i in 0..5 {
        text.push_str(&format!("0.{i},1.{i},{}\n", i % 2));
    }
    text.push_str("0.5,oops,1\n");
    fs::write(&path, text).unwrap();
    match load_csv(&path) {
        Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_feddua"))
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("small.cfg");
    fs::write(&cfg_path, SMALL).unwrap();
    let out = tmp.path().join("out");

    let ok = cli()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--set", "rounds=2", "--threads", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let logs = cli()
        .arg("verify-logs")
        .arg("--ledger")
        .arg(out.join("verdicts.log"))
        .output()
        .unwrap();
    assert!(logs.status.success());

    let bad_value = cli()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--set", "clients_per_round=99"])
        .output()
        .unwrap();
    assert_eq!(bad_value.status.code(), Some(2));

    let missing = cli()
        .args(["run", "--config"])
        .arg(tmp.path().join("absent.cfg"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let tampered = tmp.path().join("tampered.log");
    fs::write(&tampered, "#round\tclient_id\tverdict\treason\tclaimed\testimated\ttrust\n3\t1\tACCEPT\tNONE\t10\t10\tHONEST\n1\t1\tACCEPT\tNONE\t10\t10\tHONEST\n").unwrap();
    let rejected = cli()
        .arg("verify-logs")
        .arg("--ledger")
        .arg(&tampered)
        .output()
        .unwrap();
    assert_eq!(rejected.status.code(), Some(1));
}

#[test]
fn calibrate_then_reuse_prior() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("small.cfg");
    fs::write(&cfg_path, SMALL).unwrap();
    let prior = tmp.path().join("prior.txt");
    let status = cli()
        .args(["calibrate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&prior)
        .status()
        .unwrap();
    assert!(status.success());

    let mut cfg = small();
    run_to(&cfg, 1, &tmp.path().join("fresh"));
    cfg.calib_prior = Some(prior);
    run_to(&cfg, 1, &tmp.path().join("loaded"));
    assert_eq!(
        fs::read(tmp.path().join("fresh/metrics.csv")).unwrap(),
        fs::read(tmp.path().join("loaded/metrics.csv")).unwrap()
    );

    cfg.strategy = "fedprox".into();
    let exec = RayonExecutor::new(1).unwrap();
    assert!(run_experiment(&cfg, &exec).unwrap_err().is_config());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            ExperimentConfig::load(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}

#[test]
fn median_alpha_falls_with_volume_on_the_default_task() {
    let cfg = ExperimentConfig::default();
    let fed = prepare(&cfg).unwrap();
    let cal = calibrate(&cfg, &fed, &RayonExecutor::new(0).unwrap()).unwrap();
    for (round, cells) in cal.alphas.iter().enumerate() {
        let medians: Vec<f64> = cells.iter().map(|a| quantile(a, 0.5)).collect();
        assert!(medians.windows(2).all(|w| w[1] < w[0]), "round {round}: {medians:?}");
    }
}
