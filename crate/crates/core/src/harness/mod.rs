//! Scenario runner: configuration, topology construction, the roaming
//! journey driver, and stage-timeline reports.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{
    AuthMode, AuthPlacement, ConfigError, ScenarioConfig, ScenarioSpec, StateMode, StatePath,
    SubscriptionMode,
};
pub use report::{
    assemble_report, interruption_breakdown, mec_ue_legs_ms, to_csv, InterruptionBreakdown,
    LatencyReport, StageTiming,
};
pub use scenario::{
    build_sim, interruption_spec, run_auth_matrix, run_interruption, run_scenario,
    run_scenario_loopback, run_scenario_sized, run_state_sweep, state_blob, HarnessError,
    LoopbackOutcome, ScenarioOutcome, StateRoute, SweepRow, CLOUD_STORE, UE_ID,
};
