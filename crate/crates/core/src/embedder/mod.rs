//! Embedding vectors, cosine similarity, and the provider contract.
//!
//! Three providers are available: [`HashProvider`] (deterministic,
//! text-hash derived vectors for tests and dry runs), [`PrecomputedProvider`]
//! (vectors read from a line-delimited file) and [`HttpProvider`] (a remote
//! embedding service).

mod config;
mod hash;
mod http;
mod precomputed;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use config::ProviderConfig;
pub use hash::HashProvider;
pub use http::{HttpProvider, HttpProviderConfig};
pub use precomputed::{read_vector_file, write_vector_file, CachingProvider, PrecomputedProvider, VectorEntry};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding has no components")]
    EmptyVector,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid embed request: {0}")]
    InvalidRequest(String),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("provider returned dim {got} at position {index}, expected {expected}")]
    InconsistentDim {
        expected: usize,
        got: usize,
        index: usize,
    },
    #[error("no precomputed {role} vector for key {key:?}")]
    MissingVector { key: String, role: Role },
    #[error("embedding service failed after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("embedding service rejected the request: {0}")]
    Rejected(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("provider config: {0}")]
    Config(String),
}

impl EmbedError {
    /// Transient failures the caller may retry later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport { .. })
    }
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// Which side of an asymmetric retrieval pair a text plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Passage,
}

impl Role {
    /// The prefix E5-family encoders expect in front of the text.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Query => "query: ",
            Role::Passage => "passage: ",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Query => "query",
            Role::Passage => "passage",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fixed-dimension embedding with finite components.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T: Scalar = f32> {
    values: Vec<T>,
    pub role: Role,
    /// Set when the provider reported truncating the input text.
    pub truncated: bool,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>, role: Role) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbedError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { index });
        }
        Ok(Self {
            values,
            role,
            truncated: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v * factor).collect(), self.role)
    }
}

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter()
        .map(|x| {
            let x = x.to_f64_lossless();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity in `[-1, 1]`, accumulated in f64.
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<f64> {
    cosine_slices(&a.values, &b.values)
}

pub fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.to_f64_lossless() * y.to_f64_lossless())
        .sum();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Texts to embed under one role.
///
/// `keys`, when present, gives a lookup key per text (record or document id)
/// for providers that serve stored vectors; other providers ignore it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub role: Role,
    pub model_id: String,
    pub keys: Option<Vec<String>>,
}

impl EmbedRequest {
    pub fn new(texts: Vec<String>, role: Role, model_id: impl Into<String>) -> Self {
        Self {
            texts,
            role,
            model_id: model_id.into(),
            keys: None,
        }
    }

    pub fn with_keys(mut self, keys: Vec<String>) -> Self {
        self.keys = Some(keys);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.texts.is_empty() {
            return Err(EmbedError::InvalidRequest("no texts".into()));
        }
        if let Some(i) = self.texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::InvalidRequest(format!("text {i} is blank")));
        }
        if let Some(keys) = &self.keys {
            if keys.len() != self.texts.len() {
                return Err(EmbedError::InvalidRequest(format!(
                    "{} keys for {} texts",
                    keys.len(),
                    self.texts.len()
                )));
            }
        }
        Ok(())
    }

    /// Lookup key of text `i`: its explicit key, else the text itself.
    pub fn key(&self, i: usize) -> &str {
        match &self.keys {
            Some(keys) => &keys[i],
            None => &self.texts[i],
        }
    }
}

/// Something that maps texts to embeddings.
///
/// Implementations must return one vector per text in request order.
/// [`embed_batch`] enforces the count and dimension checks on top.
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(req)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(req)
    }
}

/// Embeds a validated request and checks the provider kept its contract.
pub fn embed_batch<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    req: &EmbedRequest,
) -> Result<Vec<EmbeddingVector>> {
    req.validate()?;
    let vectors = provider.embed(req)?;
    if vectors.len() != req.texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: req.texts.len(),
            got: vectors.len(),
        });
    }
    let expected = vectors[0].dim();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.dim() != expected) {
        return Err(EmbedError::InconsistentDim {
            expected,
            got: v.dim(),
            index,
        });
    }
    Ok(vectors)
}

/// Convenience wrapper: embed plain texts under `role`.
pub fn embed_texts<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[&str],
    role: Role,
) -> Result<Vec<EmbeddingVector>> {
    let req = EmbedRequest::new(
        texts.iter().map(|t| t.to_string()).collect(),
        role,
        provider.model_id(),
    );
    embed_batch(provider, &req)
}

/// Whether a model id looks like an E5-family encoder, which expects
/// `query: ` / `passage: ` prefixes.
pub fn is_e5_style(model_id: &str) -> bool {
    model_id.to_ascii_lowercase().contains("e5")
}

pub(crate) fn apply_prefix(text: &str, role: Role, enabled: bool) -> String {
    if enabled {
        format!("{}{}", role.prefix(), text)
    } else {
        text.to_string()
    }
}
