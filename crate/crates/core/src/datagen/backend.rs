use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{extract_translation, TranslationJobConfig};
use crate::http::{agent, bearer_from_env, post_json, reachable, PostError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection problems, timeouts, 5xx, 429.
    Transient(String),
    /// The service refused the request; retrying will not help.
    Rejected(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(m) => write!(f, "transient: {m}"),
            BackendError::Rejected(m) => write!(f, "rejected: {m}"),
        }
    }
}

/// A chat model that answers a single user message.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;

    /// Cheap reachability check before a run starts.
    fn probe(&self) -> Result<(), String> {
        Ok(())
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }

    fn probe(&self) -> Result<(), String> {
        (**self).probe()
    }
}

/// Chat-completions endpoint:
/// `POST {model, messages: [{role: "user", content}], ...decoding}` answered by
/// `{choices: [{message: {content}}]}`.
pub struct HttpChatBackend {
    endpoint: String,
    model: String,
    decoding: Map<String, Value>,
    token: Option<String>,
    agent: ureq::Agent,
    probe_timeout: Duration,
}

impl HttpChatBackend {
    pub fn new(cfg: &TranslationJobConfig) -> Self {
        Self {
            endpoint: cfg.endpoint.clone(),
            model: cfg.model_name.clone(),
            decoding: cfg.decoding.clone(),
            token: bearer_from_env(cfg.token_env.as_deref()),
            agent: agent(cfg.request_timeout),
            probe_timeout: cfg.request_timeout.min(Duration::from_secs(10)),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut body = self.decoding.clone();
        body.insert("model".into(), Value::String(self.model.clone()));
        body.insert(
            "messages".into(),
            serde_json::json!([{ "role": "user", "content": prompt }]),
        );
        let raw = post_json(&self.agent, &self.endpoint, self.token.as_deref(), &body).map_err(|e| match e {
            PostError::Transient(m) => BackendError::Transient(m),
            PostError::Rejected(status, text) => BackendError::Rejected(format!("HTTP {status}: {text}")),
        })?;
        // An unexpected envelope is handed back raw so the parse-retry path
        // sees it and keeps it for audit.
        match serde_json::from_str::<ChatResponse>(&raw) {
            Ok(resp) => Ok(resp
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .unwrap_or_default()),
            Err(_) => Ok(raw),
        }
    }

    fn probe(&self) -> Result<(), String> {
        reachable(&self.endpoint, self.probe_timeout)
    }
}

/// Offline stand-in used for dry runs: echoes the thread from the prompt
/// back as its "translation", wrapped in a little prose.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubTranslator {
    /// Every n-th distinct prompt (by content hash) gets its body replaced
    /// with an unrelated sentence, so filters have something to discard.
    #[serde(default)]
    pub corrupt_every: Option<u64>,
    /// Every n-th distinct prompt gets an unparseable reply.
    #[serde(default)]
    pub malformed_every: Option<u64>,
}

impl StubTranslator {
    fn bucket(prompt: &str) -> u64 {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(prompt.as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

impl ChatBackend for StubTranslator {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let h = Self::bucket(prompt);
        if self.malformed_every.is_some_and(|n| n > 0 && h.is_multiple_of(n)) {
            return Ok("I'm sorry, I can't help with that.".into());
        }
        let (title, mut body) =
            extract_translation(prompt).ok_or_else(|| BackendError::Rejected("prompt carries no thread".into()))?;
        if self.corrupt_every.is_some_and(|n| n > 0 && (h / 7).is_multiple_of(n)) {
            body = format!("Unrelated filler text number {h}.");
        }
        let obj = serde_json::json!({ "title": title, "body": body });
        Ok(format!("Here is the translation:\n```json\n{obj}\n```"))
    }
}
