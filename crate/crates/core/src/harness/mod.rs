//! Experiment harness: configuration, sweep execution, and report emission.

pub mod config;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, LanguageSpec, MetricKind, SamplerSpec, ScheduleSpec};
pub use report::emit_report;
pub use sweep::{run_sweep, run_sweep_with, ResultRow, SweepOptions};
