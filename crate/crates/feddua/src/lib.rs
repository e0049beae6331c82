//! Experiment harness for the FedDua simulator: configuration files, dataset
//! and prior file formats, the multi-threaded round loop, run artifacts and
//! the `feddua` command line.

pub mod config;
pub mod csvio;
mod error;
pub mod experiment;
pub mod outputs;
pub mod prior_file;
pub mod verdict_log;

pub use config::{DataSource, ExperimentConfig, ModelChoice};
pub use error::{HarnessError, Result};
pub use experiment::{
    calibrate, prepare, run_experiment, run_federation, sample_clients, ClientRecord, Federation, RayonExecutor,
    RoundRecord, RunOutput,
};
pub use outputs::{emit_outputs, read_metrics, MetricsRow};
