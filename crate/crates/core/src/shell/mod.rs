//! User-facing surface: workload files, trend CSVs, experiment plans, and
//! the comparison report. The command-line binary is a thin wrapper over
//! this module.

mod experiment;
mod report;
mod trends;
mod workload;

pub use experiment::{
    execute_run, initial_map, read_metrics_csv, run_experiment, write_metrics_csv,
    ExperimentOutcome, ExperimentPlan, MetricsRow, RunArtifacts, RunEntry, DEFAULT_SWEEP,
    METRICS_COLUMNS,
};
pub use report::{compare_report, CompareReport, ModeSummary};
pub use trends::{read_trend_csv, write_trend_csv};
pub use workload::{generate_workload, GenParams, Template, WorkloadSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShellError {
    #[error("io ({path}): {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse ({path}): {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv ({path}): {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Log(#[from] crate::events::LogError),
    #[error(transparent)]
    Trend(#[from] crate::heuristic::TrendError),
    #[error("validation: {0}")]
    Validation(String),
    #[error("workload sets differ across modes:\n{0}")]
    ModeMismatch(String),
}

impl ShellError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ShellError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        ShellError::Json {
            path: path.display().to_string(),
            source,
        }
    }
}
