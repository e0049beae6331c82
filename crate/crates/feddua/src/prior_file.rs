//! Text format for calibrated priors.
//!
//! ```text
//! # feddua alpha prior v1
//! strategy fedavg
//! volumes 16 32 64
//! round 0 lo hi n lo hi n lo hi n
//! round 1 ...
//! ```
//!
//! One `round` line per calibrated round with one `lo hi n` triple per volume.

use std::fmt::Write as _;
use std::path::Path;

use feddua_core::server::{AlphaPrior, Band};

use crate::error::{HarnessError, Result};

const MAGIC: &str = "# feddua alpha prior v1";

/// A prior together with the strategy it was calibrated for.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFile {
    pub strategy: String,
    pub prior: AlphaPrior,
}

impl PriorFile {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "strategy {}", self.strategy);
        let vols: Vec<String> = self.prior.volumes().iter().map(u64::to_string).collect();
        let _ = writeln!(s, "volumes {}", vols.join(" "));
        for (r, row) in self.prior.bands().iter().enumerate() {
            let _ = write!(s, "round {r}");
            for b in row {
                let _ = write!(s, " {} {} {}", b.lo, b.hi, b.n_samples);
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l.trim()));
        let err = |line: u64, msg: &str| HarnessError::parse(path, line, msg);
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(err(1, "not a prior file")),
        }
        let (n, l) = lines.next().ok_or_else(|| err(2, "missing strategy line"))?;
        let strategy = l
            .strip_prefix("strategy ")
            .ok_or_else(|| err(n, "expected `strategy <name>`"))?
            .trim()
            .to_string();
        let (n, l) = lines.next().ok_or_else(|| err(3, "missing volumes line"))?;
        let volumes = l
            .strip_prefix("volumes ")
            .ok_or_else(|| err(n, "expected `volumes ...`"))?
            .split_whitespace()
            .map(|v| v.parse::<u64>().map_err(|_| err(n, "bad volume")))
            .collect::<Result<Vec<_>>>()?;
        let mut bands = Vec::new();
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let mut fields = l.split_whitespace();
            if fields.next() != Some("round") {
                return Err(err(n, "expected `round ...`"));
            }
            let r: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| err(n, "bad round index"))?;
            if r != bands.len() {
                return Err(err(n, "rounds must be listed in order from 0"));
            }
            let rest: Vec<&str> = fields.collect();
            if rest.len() != 3 * volumes.len() {
                return Err(err(n, "expected one `lo hi n` triple per volume"));
            }
            let row = rest
                .chunks(3)
                .map(|t| {
                    Ok(Band {
                        lo: t[0].parse().map_err(|_| err(n, "bad band bound"))?,
                        hi: t[1].parse().map_err(|_| err(n, "bad band bound"))?,
                        n_samples: t[2].parse().map_err(|_| err(n, "bad sample count"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            bands.push(row);
        }
        let prior = AlphaPrior::new(volumes, bands).map_err(|e| err(0, &e.to_string()))?;
        Ok(PriorFile { strategy, prior })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| HarnessError::io(path, e))
    }
}
