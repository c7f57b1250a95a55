//! Config-driven experiment runs with CSV/JSON outputs and a run manifest.

pub mod config;
pub mod drivers;
pub mod report;

pub use config::{Component, EnvSpec, ExperimentConfig, ExperimentKind, SeedStreams};
pub use drivers::{apply_overrides, expert_policy, imitation_metrics, run, ImitationMetrics};
pub use report::{emit_plot_data, tidy_csv, Check, PlotRow, RunManifest};
