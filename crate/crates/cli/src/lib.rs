//! Configuration, orchestration and artifact output for the polaron lab.

pub mod config;
pub mod fit;
pub mod output;
pub mod pipeline;
pub mod plot;

use thiserror::Error;

pub use config::{FieldFamily, RunConfig, RunKind};
pub use pipeline::{execute, run_single, sweep_alpha, RunOutcome, Status, SweepOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("initial field rejected (ground-state assumption violated): {0}")]
    Assumption(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("nothing to plot")]
    EmptyData,
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Every error raised before a run starts maps to 1.
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Worker count from `POLARON_WORKERS`, defaulting to the available cores.
pub fn workers_from_env() -> Result<usize, HarnessError> {
    match std::env::var("POLARON_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(HarnessError::Config(format!("POLARON_WORKERS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}
