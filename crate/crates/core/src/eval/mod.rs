//! Metrics, test-time scenarios, fold evaluation and reports.

pub mod gradsuite;
mod metrics;
mod report;
mod run;
mod scenario;

pub use metrics::{auroc, f1, mean_std, Confusion};
pub use report::{grid_csv, grid_rows, FoldMetrics, GridRow, MetricSummary, MetricsReport};
pub use run::{evaluate_fold, run_scenario, EvalOptions, FoldEval};
pub use scenario::Scenario;

use crate::corrupt::CorruptError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    Metric(String),
    #[error("bad scenario {0}")]
    Scenario(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Corrupt(#[from] CorruptError),
    #[error(transparent)]
    Tensor(#[from] crate::tensorgrad::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests;
