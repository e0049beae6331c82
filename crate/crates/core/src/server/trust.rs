use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::verify::{Verdict, VerdictStatus};

/// Warn/exclude thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustPolicy {
    /// Warning count at which a client is excluded; 0 disables exclusion.
    pub w_exclude: u32,
    /// Consecutive accepts that clear all warnings.
    pub w_clear: u32,
}

impl Default for TrustPolicy {
    fn default() -> Self {
        Self {
            w_exclude: 3,
            w_clear: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustStatus {
    Honest,
    Warned(u32),
    Excluded,
}

/// One verification event.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEvent {
    pub round: usize,
    pub client_id: u32,
    pub verdict: Verdict,
    pub claimed: u64,
    /// Status after applying the verdict.
    pub status: TrustStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClientTrust {
    status: TrustStatus,
    accept_streak: u32,
}

/// Per-client verification history and warn/exclude state.
///
/// Flags raise the warning count, `w_clear` consecutive accepts reset it, and
/// reaching `w_exclude` warnings excludes the client for good.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustLedger {
    clients: BTreeMap<u32, ClientTrust>,
    events: Vec<LedgerEvent>,
}

impl TrustLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn status(&self, client_id: u32) -> TrustStatus {
        self.clients.get(&client_id).map_or(TrustStatus::Honest, |c| c.status)
    }

    pub fn is_excluded(&self, client_id: u32) -> bool {
        self.status(client_id) == TrustStatus::Excluded
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Counts of (honest, warned, excluded) among clients with any history;
    /// clients never seen are honest and not counted.
    pub fn status_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for c in self.clients.values() {
            match c.status {
                TrustStatus::Honest => counts.0 += 1,
                TrustStatus::Warned(_) => counts.1 += 1,
                TrustStatus::Excluded => counts.2 += 1,
            }
        }
        counts
    }

    /// Record `verdict` for `client_id` and return its new status. Verdicts
    /// for an excluded client are recorded but cannot change its status.
    pub fn apply(
        &mut self,
        round: usize,
        client_id: u32,
        verdict: Verdict,
        claimed: u64,
        policy: &TrustPolicy,
    ) -> TrustStatus {
        let entry = self.clients.entry(client_id).or_insert(ClientTrust {
            status: TrustStatus::Honest,
            accept_streak: 0,
        });
        entry.status = match (entry.status, verdict.status) {
            (TrustStatus::Excluded, _) => TrustStatus::Excluded,
            (status, VerdictStatus::Accept) => {
                entry.accept_streak += 1;
                match status {
                    TrustStatus::Warned(_) if entry.accept_streak >= policy.w_clear => TrustStatus::Honest,
                    s => s,
                }
            }
            (status, VerdictStatus::Flag) => {
                entry.accept_streak = 0;
                let count = match status {
                    TrustStatus::Warned(k) => k + 1,
                    _ => 1,
                };
                if policy.w_exclude > 0 && count >= policy.w_exclude {
                    TrustStatus::Excluded
                } else {
                    TrustStatus::Warned(count)
                }
            }
        };
        if entry.status == TrustStatus::Honest {
            entry.accept_streak = 0;
        }
        let status = entry.status;
        self.events.push(LedgerEvent {
            round,
            client_id,
            verdict,
            claimed,
            status,
        });
        status
    }
}
