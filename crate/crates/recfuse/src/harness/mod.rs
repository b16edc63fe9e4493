//! Evaluation metrics and end-to-end experiment orchestration.

pub mod experiment;
pub mod metrics;

pub use experiment::{
    run_experiment, summary_line, sweep, write_reports, ExperimentConfig, HarnessError,
    MetricsReport, TimingReport,
};
pub use metrics::{accuracy, auc, logloss, MetricsError};
