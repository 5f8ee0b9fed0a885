//! Retrieval and STS evaluation.
//!
//! Retrieval is scored as top-k accuracy (hit rate at k: the share of
//! queries with at least one relevant document among the k most similar),
//! STS as Spearman correlation between cosine similarities and gold
//! scores. Both are reported on a 0–100 scale, and a benchmark averages its
//! tasks.

mod benchmark;
mod retrieval;
mod spearman;
mod sts;
mod table;

use std::path::PathBuf;

use thiserror::Error;

use crate::embedder::EmbedError;

pub use benchmark::{
    read_report, run_benchmark, write_report, BenchmarkConfig, BenchmarkResult, ReportLine, TaskConfig, TaskFailure,
    TaskScore,
};
pub use retrieval::{
    hit_rates_from_vectors, load_retrieval_task, rank_of_first_relevant, retrieval_accuracy, RetrievalTask,
};
pub use spearman::{fractional_ranks, pearson, spearman};
pub use sts::{load_sts_task, sts_score, StsPair, StsTask};
pub use table::{ComparisonRow, ComparisonTable};

/// Default cutoff for the curated retrieval set.
pub const DEFAULT_RETRIEVAL_K: usize = 20;
/// Default cutoff for the MS MARCO-style retrieval set.
pub const DEFAULT_MSMARCO_K: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("spearman needs equal-length inputs of at least 2, got {left} and {right}")]
    Length { left: usize, right: usize },
    #[error("spearman undefined: {0} input is constant")]
    Constant(&'static str),
    #[error("non-finite input at position {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

pub(crate) fn file_err(path: &std::path::Path, message: impl std::fmt::Display) -> EvalError {
    EvalError::File {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Texts are embedded in chunks of this many per request.
pub(crate) const EMBED_CHUNK: usize = 256;
