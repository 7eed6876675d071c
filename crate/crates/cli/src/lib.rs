//! Scenario runner for the `navkit` command-line tool.
//!
//! Everything the binary does is available here: load a [`ScenarioConfig`],
//! pick an [`EstimatorKind`], [`run`] the Monte-Carlo trials and
//! [`write_outputs`].

pub mod runner;
pub mod scenario;

pub use runner::{
    check_pairing, estimate, list_filters, run, write_outputs, EstimatorKind, OutputFormat,
    RunOutput, Summary,
};
pub use scenario::{simulate, simulate_trial, ScenarioConfig, TrialData};
