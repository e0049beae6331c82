//! Verdict log: one tab-separated line per verification event, appended in
//! the order the server produced them.
//!
//! Fields: `round client_id ACCEPT|FLAG reason claimed estimated trust`, where
//! `estimated` is `-` when no estimate exists and `trust` is the client's
//! status after the event (`HONEST`, `WARNED:k` or `EXCLUDED`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use feddua_core::server::{FlagReason, LedgerEvent, TrustStatus, VerdictStatus};

use crate::error::{HarnessError, Result};

pub const HEADER: &str = "#round\tclient_id\tverdict\treason\tclaimed\testimated\ttrust";

pub fn reason_code(r: FlagReason) -> &'static str {
    match r {
        FlagReason::None => "NONE",
        FlagReason::AlphaOutOfBand => "ALPHA_OUT_OF_BAND",
        FlagReason::VolumeInconsistent => "VOLUME_INCONSISTENT",
        FlagReason::NotEstimable => "NOT_ESTIMABLE",
    }
}

fn parse_reason(s: &str) -> Option<FlagReason> {
    Some(match s {
        "NONE" => FlagReason::None,
        "ALPHA_OUT_OF_BAND" => FlagReason::AlphaOutOfBand,
        "VOLUME_INCONSISTENT" => FlagReason::VolumeInconsistent,
        "NOT_ESTIMABLE" => FlagReason::NotEstimable,
        _ => return None,
    })
}

pub fn trust_code(t: TrustStatus) -> String {
    match t {
        TrustStatus::Honest => "HONEST".into(),
        TrustStatus::Warned(k) => format!("WARNED:{k}"),
        TrustStatus::Excluded => "EXCLUDED".into(),
    }
}

fn parse_trust(s: &str) -> Option<TrustStatus> {
    match s {
        "HONEST" => Some(TrustStatus::Honest),
        "EXCLUDED" => Some(TrustStatus::Excluded),
        _ => s.strip_prefix("WARNED:")?.parse().ok().map(TrustStatus::Warned),
    }
}

/// Format one event as a log line (without the newline).
pub fn format_event(e: &LedgerEvent) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        e.round,
        e.client_id,
        match e.verdict.status {
            VerdictStatus::Accept => "ACCEPT",
            VerdictStatus::Flag => "FLAG",
        },
        reason_code(e.verdict.reason),
        e.claimed,
        e.verdict
            .estimated_volume
            .map_or_else(|| "-".to_string(), |v| v.to_string()),
        trust_code(e.status),
    )
}

pub fn render(events: &[LedgerEvent]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    for e in events {
        let _ = writeln!(s, "{}", format_event(e));
    }
    s
}

/// One parsed log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub round: usize,
    pub client_id: u32,
    pub status: VerdictStatus,
    pub reason: FlagReason,
    pub claimed: u64,
    pub estimated: Option<u64>,
    pub trust: TrustStatus,
}

pub fn parse_line(line: &str) -> std::result::Result<LogRecord, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, found {}", f.len()));
    }
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| format!("bad {what}: {s:?}"));
    Ok(LogRecord {
        round: num(f[0], "round")? as usize,
        client_id: u32::try_from(num(f[1], "client id")?).map_err(|_| "client id too large".to_string())?,
        status: match f[2] {
            "ACCEPT" => VerdictStatus::Accept,
            "FLAG" => VerdictStatus::Flag,
            s => return Err(format!("bad verdict: {s:?}")),
        },
        reason: parse_reason(f[3]).ok_or_else(|| format!("bad reason: {:?}", f[3]))?,
        claimed: num(f[4], "claimed volume")?,
        estimated: match f[5] {
            "-" => None,
            s => Some(num(s, "estimated volume")?),
        },
        trust: parse_trust(f[6]).ok_or_else(|| format!("bad trust status: {:?}", f[6]))?,
    })
}

/// Result of checking a log for internal consistency.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct LogReport {
    pub events: usize,
    pub accepts: usize,
    pub flags_by_reason: BTreeMap<&'static str, usize>,
    pub excluded: Vec<u32>,
    pub violations: Vec<String>,
}

impl LogReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parse and check a verdict log.
///
/// Malformed lines are a parse error. Semantic problems (rounds going
/// backwards, reasons disagreeing with verdicts, impossible trust
/// transitions, events after exclusion) are collected as violations.
pub fn check_log(text: &str, path: &Path) -> Result<LogReport> {
    let mut report = LogReport::default();
    let mut last_round = 0usize;
    let mut trust: BTreeMap<u32, TrustStatus> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i as u64 + 1;
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let rec = parse_line(raw).map_err(|m| HarnessError::parse(path, n, m))?;
        report.events += 1;
        let mut violate = |m: String| report.violations.push(format!("line {n}: {m}"));

        if rec.round < last_round {
            violate(format!("round {} after round {last_round}", rec.round));
        }
        last_round = rec.round;
        match (rec.status, rec.reason) {
            (VerdictStatus::Accept, FlagReason::None) => {}
            (VerdictStatus::Accept, r) => violate(format!("accept with reason {}", reason_code(r))),
            (VerdictStatus::Flag, FlagReason::None) => violate("flag without a reason".into()),
            (VerdictStatus::Flag, FlagReason::NotEstimable) if rec.estimated.is_some() => {
                violate("not-estimable flag carries an estimate".into())
            }
            (VerdictStatus::Flag, FlagReason::AlphaOutOfBand | FlagReason::VolumeInconsistent)
                if rec.estimated.is_none() =>
            {
                violate("flag without an estimate".into())
            }
            _ => {}
        }

        let prev = trust.get(&rec.client_id).copied().unwrap_or(TrustStatus::Honest);
        let ok = match (prev, rec.status, rec.trust) {
            (TrustStatus::Excluded, _, _) => {
                violate(format!("client {} has an event after exclusion", rec.client_id));
                true
            }
            (TrustStatus::Honest, VerdictStatus::Accept, TrustStatus::Honest) => true,
            (TrustStatus::Warned(k), VerdictStatus::Accept, TrustStatus::Warned(j)) => j == k,
            (TrustStatus::Warned(_), VerdictStatus::Accept, TrustStatus::Honest) => true,
            (TrustStatus::Honest, VerdictStatus::Flag, TrustStatus::Warned(1)) => true,
            (TrustStatus::Warned(k), VerdictStatus::Flag, TrustStatus::Warned(j)) => j == k + 1,
            (_, VerdictStatus::Flag, TrustStatus::Excluded) => true,
            _ => false,
        };
        if !ok {
            violate(format!(
                "client {}: {} -> {} is not a valid transition",
                rec.client_id,
                trust_code(prev),
                trust_code(rec.trust)
            ));
        }
        if prev != TrustStatus::Excluded {
            trust.insert(rec.client_id, rec.trust);
        }

        match rec.status {
            VerdictStatus::Accept => report.accepts += 1,
            VerdictStatus::Flag => *report.flags_by_reason.entry(reason_code(rec.reason)).or_default() += 1,
        }
    }
    report.excluded = trust
        .iter()
        .filter(|(_, &s)| s == TrustStatus::Excluded)
        .map(|(&id, _)| id)
        .collect();
    Ok(report)
}
