//! Multi-trial experiment runner: configuration, seeded parallel trials,
//! frequency statistics and CSV/JSON output.

mod checks;
mod compare;
mod config;
mod params;
mod run;
mod sink;

pub use checks::{
    certificate_checks, certificate_problems, cross_family, escape_demo, escape_demo_config, tail_check, tail_grid,
    CertificateCheck, EscapeDemo, ProbedProblem, TailCheck,
};
pub use compare::{compare_rr_sgd, AlgorithmSummary, ComparisonReport, CurvePoint, PairedNorms};
pub use config::{Algorithm, EscapeProfile, ProblemKind, RunConfig, ScheduleKind};
pub use params::{build_problem, derive_params, DerivedParams};
pub use run::{
    run_experiment, Aggregate, Certificates, ExperimentOutput, QuantileSet, TraceRow, TrialResult,
    SCHEMA_VERSION,
};
pub use sink::{read_csv, write_csv, write_json, CsvRow, CSV_HEADER};

use thiserror::Error;

use crate::concentration::ConcentrationError;
use crate::data_ingest::IngestError;
use crate::optimizers::OptimError;
use crate::problems::ProblemError;
use crate::stationarity::StationarityError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Stationarity(#[from] StationarityError),
    #[error(transparent)]
    Concentration(#[from] ConcentrationError),
    #[error("CSV error: {0}")]
    Csv(String),
}

impl HarnessError {
    /// Configuration-level failures (as opposed to I/O or numerical ones).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::Problem(_) | HarnessError::Optim(OptimError::Parameter(_))
        )
    }
}

/// Worker count: the config's request (0 for all cores), capped by
/// `RESHUFFLE_OPT_THREADS`.
pub fn worker_count(requested: usize) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut k = if requested == 0 { available } else { requested };
    if let Some(cap) = std::env::var("RESHUFFLE_OPT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if cap > 0 {
            k = k.min(cap);
        }
    }
    k.max(1)
}
