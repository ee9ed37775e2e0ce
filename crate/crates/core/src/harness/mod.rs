//! Scenario configuration, experiment runs and metrics.

pub mod experiments;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use metrics::Metrics;
pub use run::{run_scenario, RunOutput};
pub use scenario::{AttackConfig, NodeConfig, OfficerSetting, ScenarioConfig, SourceConfig};
