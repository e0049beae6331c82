//! Numerical kernel: parameter vectors, seeded randomness, the two
//! classifiers with hand-written gradients, and the plain SGD stepper.
//!
//! The stepper is SGD with a constant learning rate and nothing else, so one
//! epoch over `R` batches satisfies `delta = -eta * sum_r grad_r` up to
//! floating-point association. Volume estimation inverts exactly that sum.
//! (The textbook form of this sum uses `T` as the upper index in one place and
//! `R` in the prose around it; both mean the number of batches in the epoch.)

mod model;
mod params;
mod rng;
mod sgd;

pub use model::{accuracy, backward, forward_loss, Batch, ModelKind, ModelSpec};
pub use params::ParamVector;
pub use rng::{stream, SimRng};
pub use sgd::{sgd_epoch, sgd_epoch_with, EpochOutcome};

/// L2 norm of a slice.
pub fn l2_norm(xs: &[f64]) -> f64 {
    libm::sqrt(xs.iter().map(|x| x * x).sum())
}
