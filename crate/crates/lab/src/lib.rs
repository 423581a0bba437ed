//! Experiment harness for the `vfgl-core` simulator: configuration files,
//! seeded experiment batches and method comparison tables.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;

pub use compare::{compare_methods, CompareRow};
pub use config::{Dataset, RunConfig};
pub use error::{LabError, Result};
pub use experiment::{run_experiment, run_seed, worker_limit, SeedRun, StageTimings};
