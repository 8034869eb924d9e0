//! Scenario-driven front end for the `ddenoc` toolkit.
//!
//! A scenario is a JSON file naming one experiment kind (`steady-state`,
//! `stability`, `track`, `simulate` or `compare`) and its settings. Running it
//! writes `<out>/<scenario>/<kind>_<artifact>.csv` files and a
//! `manifest.json` listing them with SHA-256 checksums.

pub mod runner;
pub mod scenario;

pub use runner::{run_scenario, thermal_invariant_drift, Manifest, RunOutcome};
pub use scenario::{Kind, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Core(#[from] ddenoc::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 for scenario validation failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            _ => 1,
        }
    }
}
