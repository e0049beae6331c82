//! Run artifacts written to the output directory.
//!
//! * `metrics.csv`: one row per round; the `clients` column packs one
//!   `id/claimed/true/estimated/verdict/reason/weight/weight_shift` entry per
//!   participant, separated by `;`.
//! * `verdicts.log`: see [`crate::verdict_log`].
//! * `config.resolved`: every config key with its effective value.
//! * `accuracy_curve.tsv`: `round<TAB>accuracy`.
//!
//! Nothing time-dependent is written, so equal configs give byte-identical
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use feddua_core::server::VerdictStatus;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{RoundRecord, RunOutput};
use crate::verdict_log::{reason_code, render};

pub const METRICS_HEADER: [&str; 12] = [
    "round",
    "accuracy",
    "test_loss",
    "participants",
    "accepted",
    "flagged",
    "dropped",
    "honest",
    "warned",
    "excluded",
    "skipped",
    "clients",
];

fn encode_clients(r: &RoundRecord) -> String {
    let mut s = String::new();
    for (i, c) in r.clients.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(
            s,
            "{}/{}/{}/{}/{}/{}/{}/{}",
            c.client_id,
            c.claimed,
            c.true_volume,
            c.estimated.map_or_else(|| "-".to_string(), |v| v.to_string()),
            match c.verdict.status {
                VerdictStatus::Accept => "ACCEPT",
                VerdictStatus::Flag => "FLAG",
            },
            reason_code(c.verdict.reason),
            c.weight,
            c.weight_shift,
        );
    }
    s
}

fn metrics_row(r: &RoundRecord) -> Vec<String> {
    let flagged = r.clients.iter().filter(|c| c.verdict.is_flag()).count();
    let dropped = r.clients.iter().filter(|c| c.weight == 0.0).count();
    vec![
        r.round.to_string(),
        r.accuracy.to_string(),
        r.test_loss.to_string(),
        r.clients.len().to_string(),
        (r.clients.len() - flagged).to_string(),
        flagged.to_string(),
        dropped.to_string(),
        r.trust_counts.0.to_string(),
        r.trust_counts.1.to_string(),
        r.trust_counts.2.to_string(),
        u8::from(r.skipped).to_string(),
        encode_clients(r),
    ]
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Write all run artifacts into `dir`, creating it if needed.
pub fn emit_outputs(dir: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;

    let metrics_path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::io(&metrics_path, std::io::Error::other(e));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in &run.rounds {
        w.write_record(metrics_row(r)).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::io(&metrics_path, e.into_error()))?;
    write_file(&metrics_path, &bytes)?;

    write_file(&dir.join("verdicts.log"), render(run.ledger.events()).as_bytes())?;
    write_file(&dir.join("config.resolved"), cfg.to_text().as_bytes())?;

    let mut curve = String::from("round\taccuracy\n");
    for r in &run.rounds {
        let _ = writeln!(curve, "{}\t{}", r.round, r.accuracy);
    }
    write_file(&dir.join("accuracy_curve.tsv"), curve.as_bytes())
}

/// The numeric columns of one `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub accuracy: f64,
    pub test_loss: f64,
    pub participants: usize,
    pub accepted: usize,
    pub flagged: usize,
    pub dropped: usize,
    pub honest: usize,
    pub warned: usize,
    pub excluded: usize,
    pub skipped: bool,
    pub clients: String,
}

/// Read `metrics.csv` back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::parse(path, 1, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| HarnessError::parse(path, 1, e.to_string()))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(HarnessError::parse(path, 1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str| HarnessError::parse(path, line, format!("bad {col}"));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(METRICS_HEADER[i]));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(METRICS_HEADER[i]));
        rows.push(MetricsRow {
            round: int(0)?,
            accuracy: float(1)?,
            test_loss: float(2)?,
            participants: int(3)?,
            accepted: int(4)?,
            flagged: int(5)?,
            dropped: int(6)?,
            honest: int(7)?,
            warned: int(8)?,
            excluded: int(9)?,
            skipped: int(10)? != 0,
            clients: rec[11].to_string(),
        });
    }
    Ok(rows)
}
