//! Federated learning kernel with client data-volume verification.
//!
//! Clients train a small quantity-aware branch that predicts an adjustment
//! factor `alpha` linking their epoch update to the number of SGD iterations
//! they ran. The server checks each upload against a calibrated prior of
//! `alpha` values and re-estimates the training volume of clients whose
//! claims do not hold up, then aggregates with the verified volumes.
//!
//! The crate is `no_std` (with `alloc`); file formats, configuration and the
//! command line live in the `feddua` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod client;
pub mod datagen;
mod error;
pub mod exec;
pub mod numcore;
pub mod server;
pub mod strategies;

pub(crate) use error::config_err;
pub use error::{Error, Result};
