//! Dataset ingestion, configuration, filter orchestration, and evaluation.
//!
//! A dataset is a directory of three CSVs (imu.csv, odom.csv, truth.csv)
//! bound together by a flat key-value config file (`run.cfg`). The runner
//! replays the streams through the filter under a chosen update combination
//! (I always on; O, Z, N, B selectable), and the evaluator turns estimate
//! traces into the horizontal/RMS error statistics used in the reports.

mod config;
mod eval;
mod io;
mod report;
mod run;

pub use config::{InitState, OdomFormat, RunConfig};
pub use eval::{ErrorEpoch, ErrorReport, evaluate, fit_monomial, monomial_residual_ratio};
pub use io::{
    Dataset, TruthRecord, ingest, read_config, read_trace_csv, scenario_run_config, simulate_dataset, write_dataset,
    write_trace_csv,
};
pub use report::{format_report_table, write_error_epochs_csv, write_summary_csv};
pub use run::{RunOutput, SlipRecord, StopRecord, TraceEpoch, UpdateCombo, run_filter};

use thiserror::Error;

use crate::aiding::AidingError;
use crate::ekf::FilterError;
use crate::geodesy::GeodesyError;
use crate::mechanization::MechanizationError;
use crate::sim::SimError;
use crate::smoother::SmootherError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: timestamp not increasing")]
    NonMonotoneTime { path: String, line: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("timestamp regression at t = {0}")]
    TimestampRegression(f64),
    #[error("estimate and truth traces do not overlap in time")]
    NoOverlap,
    #[error("unknown update combination: {0}")]
    InvalidCombo(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error(transparent)]
    Aiding(#[from] AidingError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Mechanization(#[from] MechanizationError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl PipelineError {
    /// CLI exit code class: 2 for validation problems, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse { .. }
            | PipelineError::NonMonotoneTime { .. }
            | PipelineError::Config(_)
            | PipelineError::InvalidCombo(_)
            | PipelineError::NoOverlap
            | PipelineError::Io(_) => 2,
            _ => 3,
        }
    }
}
