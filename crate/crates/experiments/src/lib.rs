//! Config-driven Monte Carlo sweeps over the predictor classes, written as
//! CSV records.

pub mod config;
pub mod error;
pub mod records;
pub mod report;
pub mod runner;
pub mod summary;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{Result, RunError};
pub use records::Record;

/// Worker count from an explicit request, then the config, then the machine.
pub fn resolve_workers(flag: Option<usize>, cfg: &ExperimentConfig) -> usize {
    flag.or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
