//! Scenario files, the tick driver and run metrics.

mod config;
mod metrics;
mod pointcloud;
mod run;

use thiserror::Error;

pub use config::{
    CircleConfig, DynamicsConfig, Fault, Guidance, HapticConfig, LocalizationConfig, Mode, PointCloudConfig,
    ScenarioConfig, SwarmConfig,
};
pub use metrics::{
    compute_metrics, directed_hausdorff, format_time, hausdorff, measure_period, parse_trajectory, write_frame,
    Frame, MetricsAccumulator, RunMetrics, Sample,
};
pub use pointcloud::{
    downsample, load_pointcloud, parse_pointcloud, sphere_cloud, CloudError, PointCloud, SyntheticSphere,
};
pub use run::{circle_period, metrics_for_log, run_scenario, RunLogs, RunOutput};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error("trajectory log line {line}: {detail}")]
    LogParse { line: usize, detail: String },
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::ConfigInvalid(_) | ScenarioError::LogParse { .. } => 1,
            ScenarioError::Runtime(_) | ScenarioError::Io(_) => 2,
        }
    }
}
