use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{apply_prefix, is_e5_style, EmbedError, EmbedRequest, EmbeddingProvider, EmbeddingVector, Result, Role};
use crate::http::{agent, bearer_from_env, post_json, PostError};
use crate::retry::Backoff;

pub const DEFAULT_TOKEN_ENV: &str = "EMBEDDING_API_TOKEN";

/// Settings for a remote embedding service.
///
/// The service takes `POST {model_id, role, texts[]}` and answers
/// `{dim, vectors[][]}`, optionally with `truncated[]` flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout", with = "crate::retry::secs_f64")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_batch")]
    pub max_batch: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Prepend `query: ` / `passage: `. Defaults to on for E5-style model ids.
    #[serde(default)]
    pub prefix_roles: Option<bool>,
    #[serde(default)]
    pub backoff: Backoff,
}

fn default_token_env() -> Option<String> {
    Some(DEFAULT_TOKEN_ENV.to_string())
}
fn default_timeout() -> Duration {
    Duration::from_secs(30)
}
fn default_retries() -> u32 {
    3
}
fn default_batch() -> usize {
    64
}
fn default_in_flight() -> usize {
    4
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            token_env: default_token_env(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            max_batch: default_batch(),
            max_in_flight: default_in_flight(),
            prefix_roles: None,
            backoff: Backoff::default(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model_id: &'a str,
    role: Role,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    #[serde(default)]
    truncated: Option<Vec<bool>>,
}

pub struct HttpProvider {
    cfg: HttpProviderConfig,
    agent: ureq::Agent,
    token: Option<String>,
    prefix: bool,
}

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Result<Self> {
        if cfg.max_batch == 0 || cfg.max_in_flight == 0 {
            return Err(EmbedError::Config(
                "max_batch and max_in_flight must be at least 1".into(),
            ));
        }
        let token = bearer_from_env(cfg.token_env.as_deref());
        let prefix = cfg.prefix_roles.unwrap_or_else(|| is_e5_style(&cfg.model_id));
        Ok(Self {
            agent: agent(cfg.timeout),
            token,
            prefix,
            cfg,
        })
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.cfg
    }

    fn embed_chunk(&self, texts: &[String], role: Role) -> Result<Vec<EmbeddingVector>> {
        let texts: Vec<String> = texts
            .iter()
            .map(|t| apply_prefix(t, role, self.prefix))
            .collect();
        let body = WireRequest {
            model_id: &self.cfg.model_id,
            role,
            texts: &texts,
        };
        let mut attempt = 0u32;
        let raw = loop {
            attempt += 1;
            match post_json(&self.agent, &self.cfg.endpoint, self.token.as_deref(), &body) {
                Ok(raw) => break raw,
                Err(PostError::Rejected(status, text)) => {
                    return Err(EmbedError::Rejected(format!("HTTP {status}: {text}")))
                }
                Err(PostError::Transient(message)) => {
                    if attempt > self.cfg.max_retries {
                        return Err(EmbedError::Transport {
                            message,
                            attempts: attempt,
                        });
                    }
                    log::warn!("embedding request failed (attempt {attempt}): {message}");
                    self.cfg.backoff.wait(attempt - 1);
                }
            }
        };
        let resp: WireResponse = serde_json::from_str(&raw)
            .map_err(|e| EmbedError::Rejected(format!("unparseable response: {e}")))?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: resp.vectors.len(),
            });
        }
        let flags = resp.truncated.unwrap_or_default();
        resp.vectors
            .into_iter()
            .enumerate()
            .map(|(index, values)| {
                if values.len() != resp.dim {
                    return Err(EmbedError::InconsistentDim {
                        expected: resp.dim,
                        got: values.len(),
                        index,
                    });
                }
                let mut v = EmbeddingVector::new(values, role)?;
                v.truncated = flags.get(index).copied().unwrap_or(false);
                Ok(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        let chunks: Vec<&[String]> = req.texts.chunks(self.cfg.max_batch).collect();
        if chunks.len() <= 1 {
            return chunks
                .first()
                .map_or(Ok(Vec::new()), |c| self.embed_chunk(c, req.role));
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<EmbeddingVector>>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let workers = self.cfg.max_in_flight.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let out = self.embed_chunk(chunks[i], req.role);
                    let failed = out.is_err();
                    results.lock().expect("results lock poisoned")[i] = Some(out);
                    if failed {
                        // Stop handing out further chunks.
                        next.store(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut vectors = Vec::with_capacity(req.texts.len());
        for slot in results.into_inner().expect("results lock poisoned") {
            match slot {
                Some(Ok(v)) => vectors.extend(v),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok(vectors)
    }
}
