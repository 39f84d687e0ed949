//! Model selection for stochastic contextual bandits.
//!
//! The crate implements Mod-IGW: an epoch-doubling inverse-gap-weighting
//! bandit that refits an offline model-selection estimation oracle at each
//! epoch boundary, prunes candidate model classes with a holdout
//! goodness-of-fit test, and sets its exploration rate from the simplest
//! surviving class. Environments are finite and carry an exact ground-truth
//! reward table, so regret and misspecification can be computed exactly.
//!
//! Module map:
//!
//! - [`env`]: synthetic environments, exact regret, misspecification diagnostics
//! - [`models`]: model classes, ERM fitting, estimation oracle, estimation rates
//! - [`igw`]: the inverse-gap-weighting action kernel and its exact evaluators
//! - [`mistest`]: the holdout misspecification test
//! - [`bandit`]: the Mod-IGW epoch loop
//! - [`harness`]: scenarios, multi-seed runs, logs and aggregate reports
//!
//! Class indices are zero-based throughout the API and in all output files.

pub mod bandit;
pub mod env;
mod error;
pub mod harness;
pub mod igw;
pub mod mistest;
pub mod models;

pub use error::{Error, Result};

pub use bandit::{gamma_for, Algorithm, EpochRecord, EpochState, ModIgw, RoundRecord, RunConfig};
pub use env::{Environment, Noise, Sample};
pub use igw::{IgwKernel, KernelTable};
pub use mistest::{MisTestConfig, TestVerdict};
pub use models::{FittedModel, ModelClass, Partition, RateFunction};
