//! Scenario configs, presets, replicated runs and reports.
//!
//! Replication `r` draws everything from `derive_seed(master_seed, r)`, and
//! aggregation runs in replication order, so outputs are byte-identical
//! across worker counts.

mod config;
mod presets;
mod report;
mod runner;

pub use config::{
    load_and_validate_config, CohortConfig, EnrollmentPattern, ScenarioConfig, Sweep, SweepParameter, SCHEMA_VERSION,
};
pub use presets::{preset, preset_catalog, Preset, PRESET_NAMES};
pub use report::{emit_reports, ESTIMATES_HEADER};
pub use runner::{
    aggregate_replications, run_scenario, run_scenario_with, simulate_replication, EstimandSummary, FailureNote,
    PreparedScenario, RefusalObservation, RefusalSummary, ReplicationData, ReplicationRecord, ScenarioResult,
    SweepPoint, SweepResult, Timeline, TimelineSummary, TruthKind, MAX_FAILURE_FRACTION,
};
