//! Micro-invasive database knob tuning over a deterministic simulated DBMS.
//!
//! The pipeline: characterize the production workload by its metrics,
//! synthesize a matching mixture of basic workloads, tune a clone running
//! that mixture with experience-enhanced SMAC, then roll the best clone
//! configurations onto production with recursive cluster-based selection.

pub mod cli;
pub mod knowledge;
pub mod models;
pub mod rng;
pub mod selection;
pub mod simenv;
pub mod space;
pub mod synthesis;
pub mod tuner;

use thiserror::Error;

/// Failure reading or writing one of the engine's files.
#[derive(Debug, Error)]
pub enum FileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}
