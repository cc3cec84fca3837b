// SPDX-License-Identifier: Apache-2.0

//! Batch experiment driver: single runs, parameter sweeps to CSV and CSV
//! summaries.

pub mod config;
pub mod summary;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid sweep: {0}")]
    Spec(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Engine(#[from] gasper_abm::engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] gasper_abm::metrics::MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
