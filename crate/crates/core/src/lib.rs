//! Adapting multilingual embedding models to a low-resource language.
//!
//! The pipeline translates English title/body pairs with an LLM
//! ([`datagen`]), drops pairs whose meaning drifted in translation
//! ([`driftfilter`]), fine-tunes on what is left (an external trainer),
//! averages the result with the base model ([`merge`]) and scores every
//! variant on retrieval and similarity tasks ([`evalbench`]).

pub mod corpus;
pub mod datagen;
pub mod driftfilter;
pub mod embedder;
pub mod evalbench;
mod http;
pub mod merge;
mod parallel;
pub mod pipeline;
pub mod retry;
pub mod scalar;
pub mod ter;

pub use corpus::{Corpus, PairRecord};
pub use driftfilter::{Decision, DriftMetrics, DriftReason, DriftReport, FilterThresholds};
pub use embedder::{EmbeddingProvider, EmbeddingVector, Role};
pub use scalar::Scalar;

/// Embedding as returned by providers.
pub type Embedding = EmbeddingVector<f32>;
/// Similarity scores as compared against thresholds.
pub type Metrics = DriftMetrics<f64>;
pub type Thresholds = FilterThresholds<f64>;
