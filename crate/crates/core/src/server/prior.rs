use alloc::vec::Vec;

use crate::{config_err, Result};

/// Accepted `alpha` interval of one (round, volume) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub n_samples: usize,
}

impl Band {
    pub fn contains(&self, alpha: f64) -> bool {
        alpha >= self.lo && alpha <= self.hi
    }

    pub fn is_disjoint(&self, other: &Band) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }

    /// Zero-width bands are widened symmetrically by
    /// `eps = 1e-6 * |lo| + 1e-9` so they keep positive measure.
    pub fn widened(self) -> Self {
        let eps = 1e-6 * self.lo.abs() + 1e-9;
        if self.hi - self.lo < eps {
            Band {
                lo: self.lo - eps,
                hi: self.hi + eps,
                ..self
            }
        } else {
            self
        }
    }
}

/// Calibrated `alpha` bands indexed by round and calibration volume.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPrior {
    volumes: Vec<u64>,
    /// `bands[round][volume_index]`
    bands: Vec<Vec<Band>>,
}

impl AlphaPrior {
    pub fn new(volumes: Vec<u64>, bands: Vec<Vec<Band>>) -> Result<Self> {
        if volumes.is_empty() || bands.is_empty() {
            return Err(config_err("prior needs at least one volume and one round"));
        }
        if volumes.windows(2).any(|w| w[0] >= w[1]) || volumes[0] == 0 {
            return Err(config_err("prior volumes must be positive and strictly ascending"));
        }
        for row in &bands {
            if row.len() != volumes.len() {
                return Err(config_err("prior band row length differs from volume count"));
            }
            for b in row {
                if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                    return Err(config_err("prior band bounds must be finite with lo <= hi"));
                }
            }
        }
        Ok(Self { volumes, bands })
    }

    pub fn volumes(&self) -> &[u64] {
        &self.volumes
    }

    /// Last calibrated round.
    pub fn horizon(&self) -> usize {
        self.bands.len() - 1
    }

    pub fn bands(&self) -> &[Vec<Band>] {
        &self.bands
    }

    /// Raw calibrated cell (no widening).
    pub fn cell(&self, round: usize, volume_index: usize) -> Band {
        self.bands[round.min(self.horizon())][volume_index]
    }

    /// Band for any (round, volume). Rounds past the horizon use the last
    /// calibrated round; volumes between grid points interpolate `lo` and `hi`
    /// linearly in `ln(volume)`; volumes outside the grid take the nearest
    /// end. Degenerate bands come back widened.
    pub fn lookup(&self, round: usize, volume: u64) -> Band {
        let row = &self.bands[round.min(self.horizon())];
        let v = volume.max(1);
        let band = match self.volumes.iter().position(|&g| g >= v) {
            None => row[row.len() - 1],
            Some(0) => row[0],
            Some(i) if self.volumes[i] == v => row[i],
            Some(i) => {
                let (v0, v1) = (self.volumes[i - 1] as f64, self.volumes[i] as f64);
                let t = (libm::log(v as f64) - libm::log(v0)) / (libm::log(v1) - libm::log(v0));
                let (a, b) = (row[i - 1], row[i]);
                Band {
                    lo: a.lo + t * (b.lo - a.lo),
                    hi: a.hi + t * (b.hi - a.hi),
                    n_samples: a.n_samples.min(b.n_samples),
                }
            }
        };
        band.widened()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
