//! Operator surface for the production simulator: scenario files,
//! shipped presets, campaign execution and report emission.

pub mod graph;
pub mod presets;
pub mod runner;
pub mod scenario;

pub use runner::{run_scenario, RunOutcome, RunnerError};
pub use scenario::{load_scenario, Scenario, ScenarioError};
