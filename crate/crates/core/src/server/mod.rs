//! Server side: `alpha` prior calibration, upload verification, the trust
//! ledger, and volume-weighted aggregation.

mod aggregate;
mod calibrate;
mod prior;
mod trust;
mod verify;

pub use aggregate::{aggregate, effective_volume, volume_weights, weight_perturbation, Aggregation, Contribution};
pub use calibrate::{calibrate_prior, Calibration, CalibrationConfig, MIN_CELL_SAMPLES, SHADOW_ID_BASE};
pub use prior::{quantile, AlphaPrior, Band};
pub use trust::{LedgerEvent, TrustLedger, TrustPolicy, TrustStatus};
pub use verify::{estimate_update_volume, verify, FlagReason, Verdict, VerdictStatus, VerifyConfig};
