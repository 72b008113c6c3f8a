//! Iterative imitation learning from experts with privileged state, on finite
//! POMDPs small enough to solve and enumerate exactly.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: tabular POMDP model, simulation, Bayes filtering, history enumeration.
//! - [`policy`]: tabular softmax student policies over (truncated) histories.
//! - [`expert`]: privileged, non-privileged and KL-constrained experts, and the
//!   teacher-side correction of student rollouts.
//! - [`learn`]: dataset aggregation, SFT / DPO / KTO updates and the iterative loop.
//! - [`analysis`]: performance evaluation, imitation/realizability gaps,
//!   recoverability, regret, bound checks and gradient checking.
//! - [`config`] and [`runner`]: config-driven experiments and sweeps.

pub mod analysis;
pub mod config;
pub mod env;
pub mod error;
pub mod expert;
pub mod learn;
pub mod math;
pub mod policy;
pub mod rng;
pub mod runner;

pub use error::{LeapError, Result};
