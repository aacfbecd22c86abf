//! Experiment harness: scenario files, network assembly, the runner with
//! its safety monitors, and metrics emission.

mod metrics;
mod runner;
mod scenario;

pub use metrics::{
    emit, linear_fit, sweep, EmitFormat, FileRow, GetRow, HeightRecord, ScenarioResult,
};
pub use runner::{build_network, run_scenario, BuiltNetwork};
pub use scenario::{
    AdversarySection, ChainSection, NetworkSection, Scenario, ScenarioError, WorkloadSection,
};
