//! Experiment harness for the concurrent quantiles sketch: throughput,
//! accuracy, standard-error and hole workloads, plus the analysis
//! calculators, all emitting CSV or JSON rows.

pub mod affinity;
pub mod cli;
pub mod report;
pub mod workload;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Output(String),
}

impl BenchError {
    /// Process exit code: 1 for bad input or environment, 2 for a broken
    /// internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Invariant(_) => 2,
            _ => 1,
        }
    }
}

impl From<quancurrent::Error> for BenchError {
    fn from(e: quancurrent::Error) -> Self {
        match e {
            quancurrent::Error::InvariantViolation(m) => BenchError::Invariant(m),
            quancurrent::Error::InvalidConfig(m) => BenchError::Config(m),
            other => BenchError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
