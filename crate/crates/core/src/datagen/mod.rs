//! LLM translation of source pairs into the target language.
//!
//! Each record is sent as one chat message (see [`build_prompt`]); the
//! first JSON object in the reply with `title` and `body` strings becomes
//! the translation. Unparseable replies and transport failures are retried
//! up to `max_retries` times; records that still fail are kept, with the
//! reason and last raw reply in `meta`, in a separate failed corpus.

mod backend;
mod journal;
mod prompt;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{Corpus, PairRecord};
use crate::retry::Backoff;

pub use backend::{BackendError, ChatBackend, HttpChatBackend, StubTranslator};
pub use journal::{records_path, Journal, JournalEntry, Status};
pub use prompt::{build_prompt, extract_translation};

pub const DEFAULT_TOKEN_ENV: &str = "TRANSLATION_API_TOKEN";

pub const META_MODEL: &str = "translation_model";
pub const META_ATTEMPTS: &str = "translation_attempts";
pub const META_FAILURE: &str = "failure_reason";
pub const META_LAST_RESPONSE: &str = "last_response";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("record {id:?}: {message}")]
    Precondition { id: String, message: String },
    #[error("translation endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("nothing to translate: input corpus is empty")]
    EmptyInput,
    #[error("invalid translation config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Journal { path: PathBuf, message: String },
}

pub type Result<T, E = DatagenError> = std::result::Result<T, E>;

/// Settings for a translation job, usually read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationJobConfig {
    #[serde(default)]
    pub endpoint: String,
    pub model_name: String,
    /// Human-readable language name substituted into the prompt.
    pub target_language: String,
    /// BCP-47 code written to `tgt_lang` of translated records.
    pub target_lang_code: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout", with = "crate::retry::secs_f64")]
    pub request_timeout: Duration,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_token_env")]
    pub token_env: Option<String>,
    #[serde(default)]
    pub backoff: Backoff,
    /// Extra request fields (temperature, max_tokens, ...) passed through
    /// unchanged.
    #[serde(default)]
    pub decoding: Map<String, Value>,
    /// Use the offline stub instead of `endpoint`.
    #[serde(default)]
    pub stub: Option<StubTranslator>,
}

fn default_retries() -> u32 {
    2
}
fn default_timeout() -> Duration {
    Duration::from_secs(120)
}
fn default_concurrency() -> usize {
    4
}
fn default_token_env() -> Option<String> {
    Some(DEFAULT_TOKEN_ENV.to_string())
}

impl TranslationJobConfig {
    pub fn new(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        target_language: impl Into<String>,
        target_lang_code: impl Into<String>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            target_language: target_language.into(),
            target_lang_code: target_lang_code.into(),
            max_retries: default_retries(),
            request_timeout: default_timeout(),
            max_concurrency: default_concurrency(),
            token_env: default_token_env(),
            backoff: Backoff::default(),
            decoding: Map::new(),
            stub: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DatagenError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| DatagenError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(DatagenError::Config("max_concurrency must be at least 1".into()));
        }
        if self.target_language.trim().is_empty() || self.target_lang_code.trim().is_empty() {
            return Err(DatagenError::Config("target language name and code are required".into()));
        }
        if self.stub.is_none() && self.endpoint.trim().is_empty() {
            return Err(DatagenError::Config("endpoint is required unless [stub] is set".into()));
        }
        Ok(())
    }

    /// The backend this config selects.
    pub fn backend(&self) -> Box<dyn ChatBackend> {
        match &self.stub {
            Some(stub) => Box::new(stub.clone()),
            None => Box::new(HttpChatBackend::new(self)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// No reply contained a usable `{title, body}` object.
    Parse,
    /// The endpoint kept failing at the transport level.
    Transport,
    /// The endpoint refused the request outright.
    Rejected,
    /// The input record could not be translated (already translated, blank).
    Precondition,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Parse => "parse",
            FailureReason::Transport => "transport",
            FailureReason::Rejected => "rejected",
            FailureReason::Precondition => "precondition",
        }
    }
}

/// Result of translating one record.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome {
    pub record: PairRecord,
    pub attempts: u32,
    pub failure: Option<FailureReason>,
}

impl PairOutcome {
    fn failed(mut record: PairRecord, attempts: u32, reason: FailureReason, last_raw: Option<String>) -> Self {
        record.meta.insert(META_FAILURE.into(), reason.as_str().into());
        record.meta.insert(META_ATTEMPTS.into(), attempts.to_string());
        if let Some(raw) = last_raw {
            record.meta.insert(META_LAST_RESPONSE.into(), raw);
        }
        Self {
            record,
            attempts,
            failure: Some(reason),
        }
    }
}

/// Translates one untranslated record, retrying parse and transport
/// failures up to `cfg.max_retries` times.
pub fn translate_pair<B: ChatBackend + ?Sized>(
    record: &PairRecord,
    cfg: &TranslationJobConfig,
    backend: &B,
) -> Result<PairOutcome> {
    if record.tgt_title.is_some() || record.tgt_body.is_some() {
        return Err(DatagenError::Precondition {
            id: record.id.clone(),
            message: "record is already translated".into(),
        });
    }
    let prompt = build_prompt(record, &cfg.target_language)?;
    let max_attempts = cfg.max_retries + 1;
    let mut last_raw = None;
    let mut reason = FailureReason::Parse;
    for attempt in 1..=max_attempts {
        match backend.complete(&prompt) {
            Ok(raw) => match extract_translation(&raw) {
                Some((title, body)) => {
                    let mut out = record.clone().with_translation(title, body);
                    out.tgt_lang = cfg.target_lang_code.clone();
                    out.meta.insert(META_MODEL.into(), cfg.model_name.clone());
                    out.meta.insert(META_ATTEMPTS.into(), attempt.to_string());
                    return Ok(PairOutcome {
                        record: out,
                        attempts: attempt,
                        failure: None,
                    });
                }
                None => {
                    log::debug!("{}: unparseable reply on attempt {attempt}", record.id);
                    reason = FailureReason::Parse;
                    last_raw = Some(raw);
                }
            },
            Err(BackendError::Rejected(msg)) => {
                return Ok(PairOutcome::failed(record.clone(), attempt, FailureReason::Rejected, Some(msg)));
            }
            Err(BackendError::Transient(msg)) => {
                log::warn!("{}: attempt {attempt} failed: {msg}", record.id);
                reason = FailureReason::Transport;
                if attempt < max_attempts {
                    cfg.backoff.wait(attempt - 1);
                }
            }
        }
    }
    Ok(PairOutcome::failed(record.clone(), max_attempts, reason, last_raw))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TranslationStats {
    pub input: usize,
    pub translated: usize,
    pub failed: usize,
    /// Records taken from the checkpoint instead of being re-translated.
    pub resumed: usize,
    /// Requests sent in this run.
    pub attempts: u64,
    pub retries: u64,
    pub failures_by_reason: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct TranslationRun {
    pub translated: Corpus,
    pub failed: Corpus,
    pub stats: TranslationStats,
}

/// Translates a corpus with up to `cfg.max_concurrency` requests in flight.
///
/// Every input record ends up in exactly one of the two outputs, in input
/// order. With a journal, each finished record is persisted as it
/// completes and records already in the journal are not sent again.
/// The endpoint is probed first; if it is unreachable the run aborts
/// before anything is written.
pub fn run_translation<B: ChatBackend + ?Sized>(
    corpus: &Corpus,
    cfg: &TranslationJobConfig,
    backend: &B,
    mut journal: Option<&mut Journal>,
) -> Result<TranslationRun> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(DatagenError::EmptyInput);
    }
    let done: HashMap<String, JournalEntry> = journal
        .as_deref()
        .map(|j| j.completed().clone())
        .unwrap_or_default();
    let pending: Vec<usize> = (0..corpus.len())
        .filter(|&i| !done.contains_key(&corpus.records[i].id))
        .collect();
    if !pending.is_empty() {
        backend.probe().map_err(DatagenError::Unreachable)?;
    }

    let mut fresh: HashMap<usize, PairOutcome> = HashMap::with_capacity(pending.len());
    let mut journal_err = None;
    let next = AtomicUsize::new(0);
    let workers = cfg.max_concurrency.min(pending.len()).max(1);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<(usize, PairOutcome)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(k) else { break };
                let rec = &corpus.records[i];
                let outcome = translate_pair(rec, cfg, backend)
                    .unwrap_or_else(|e| PairOutcome::failed(rec.clone(), 0, FailureReason::Precondition, Some(e.to_string())));
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: the journal is only touched from this thread.
        for (i, outcome) in rx {
            if let Some(j) = journal.as_deref_mut() {
                if journal_err.is_none() {
                    if let Err(e) = j.append(&JournalEntry::from_outcome(&outcome)) {
                        journal_err = Some(e);
                        next.store(usize::MAX / 2, Ordering::Relaxed);
                    }
                }
            }
            fresh.insert(i, outcome);
        }
    });
    if let Some(e) = journal_err {
        return Err(e);
    }

    let mut stats = TranslationStats {
        input: corpus.len(),
        resumed: corpus.len() - pending.len(),
        ..Default::default()
    };
    let mut translated = Vec::new();
    let mut failed = Vec::new();
    for (i, rec) in corpus.records.iter().enumerate() {
        let (record, failure) = match fresh.remove(&i) {
            Some(o) => {
                stats.attempts += u64::from(o.attempts);
                stats.retries += u64::from(o.attempts.saturating_sub(1));
                (o.record, o.failure)
            }
            None => {
                let e = &done[&rec.id];
                let failure = (e.status == Status::Failed).then(|| {
                    e.record
                        .meta
                        .get(META_FAILURE)
                        .and_then(|r| serde_json::from_value(Value::String(r.clone())).ok())
                        .unwrap_or(FailureReason::Parse)
                });
                (e.record.clone(), failure)
            }
        };
        match failure {
            None => translated.push(record),
            Some(reason) => {
                *stats.failures_by_reason.entry(reason.as_str().into()).or_default() += 1;
                failed.push(record);
            }
        }
    }
    stats.translated = translated.len();
    stats.failed = failed.len();
    log::info!(
        "translation: {} translated, {} failed, {} resumed",
        stats.translated,
        stats.failed,
        stats.resumed
    );
    Ok(TranslationRun {
        translated: Corpus {
            records: translated,
            source_uri: format!("{}#translated", corpus.source_uri),
        },
        failed: Corpus {
            records: failed,
            source_uri: format!("{}#failed", corpus.source_uri),
        },
        stats,
    })
}
