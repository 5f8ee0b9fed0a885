//! Pair records, the line-delimited pair file, and seeded subsampling.
//!
//! A pair file holds one JSON object per line with exactly the fields
//! `id, src_lang, tgt_lang, src_title, src_body, tgt_title, tgt_body, meta`.
//! Untranslated records carry `null` in both `tgt_*` fields.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate record id {id:?} (lines {first_line} and {line})")]
    DuplicateId {
        id: String,
        first_line: usize,
        line: usize,
    },
    #[error("invalid record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("cannot sample {requested} records from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A source title/body pair, optionally with its translation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_title: String,
    pub src_body: String,
    pub tgt_title: Option<String>,
    pub tgt_body: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl PairRecord {
    pub fn new(
        id: impl Into<String>,
        src_lang: impl Into<String>,
        tgt_lang: impl Into<String>,
        src_title: impl Into<String>,
        src_body: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            src_title: src_title.into(),
            src_body: src_body.into(),
            tgt_title: None,
            tgt_body: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_translation(mut self, title: impl Into<String>, body: impl Into<String>) -> Self {
        self.tgt_title = Some(title.into());
        self.tgt_body = Some(body.into());
        self
    }

    pub fn is_translated(&self) -> bool {
        self.tgt_title.is_some() && self.tgt_body.is_some()
    }

    /// Translated title and body, if both are present.
    pub fn translation(&self) -> Option<(&str, &str)> {
        match (&self.tgt_title, &self.tgt_body) {
            (Some(t), Some(b)) => Some((t.as_str(), b.as_str())),
            _ => None,
        }
    }

    pub fn check(&self) -> Result<()> {
        let invalid = |message: &str| CorpusError::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.src_title.is_empty() {
            return Err(invalid("empty src_title"));
        }
        if self.src_body.is_empty() {
            return Err(invalid("empty src_body"));
        }
        if self.tgt_title.is_some() != self.tgt_body.is_some() {
            return Err(invalid("tgt_title and tgt_body must both be present or both null"));
        }
        Ok(())
    }
}

/// An ordered, id-unique collection of pair records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<PairRecord>,
    pub source_uri: String,
}

impl Corpus {
    /// Builds a corpus, checking every record and id uniqueness.
    pub fn new(records: Vec<PairRecord>, source_uri: impl Into<String>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            rec.check()?;
            if let Some(first) = seen.insert(rec.id.as_str(), pos) {
                return Err(CorpusError::DuplicateId {
                    id: rec.id.clone(),
                    first_line: first + 1,
                    line: pos + 1,
                });
            }
        }
        Ok(Self {
            records,
            source_uri: source_uri.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PairRecord> {
        self.records.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

/// Reads a pair file. Records are returned in file order.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        rec.check().map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(&first_line) = seen.get(&rec.id) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                first_line,
                line: lineno,
            });
        }
        seen.insert(rec.id.clone(), lineno);
        records.push(rec);
    }
    log::debug!("loaded {} records from {}", records.len(), path.display());
    Ok(Corpus {
        records,
        source_uri: path.display().to_string(),
    })
}

/// Writes a pair file, one record per line.
pub fn write_pairs(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_records(&corpus.records, path)
}

pub fn write_records<'a>(
    records: impl IntoIterator<Item = &'a PairRecord>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        let line = serde_json::to_string(rec).expect("pair records always serialize");
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Draws `n` records uniformly without replacement.
///
/// The generator is ChaCha20 keyed with the little-endian bytes of `seed`
/// (remaining key bytes zero, nonce zero). Selection is a partial
/// Fisher-Yates shuffle of the index range `0..len`: for `i` in `0..n`,
/// swap position `i` with `i + u` where `u` is drawn from `[0, len - i)`
/// by Lemire's multiply-and-reject method over successive `next_u64`
/// outputs. The first `n` indices are then sorted so the output keeps the
/// corpus order.
pub fn sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    let picked = sample_indices(corpus.len(), n, seed)?;
    Ok(Corpus {
        records: picked.into_iter().map(|i| corpus.records[i].clone()).collect(),
        source_uri: format!("{}#sample(n={n},seed={seed})", corpus.source_uri),
    })
}

/// The sorted record positions that [`sample`] selects.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = seeded_rng(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + bounded(&mut rng, (len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx)
}

fn seeded_rng(seed: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

// Unbiased draw from [0, bound), bound > 0.
fn bounded(rng: &mut impl RngCore, bound: u64) -> u64 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(bound);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// Findings of [`validate`]: record counts and exact-duplicate content.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub translated: usize,
    /// `(first_id, duplicate_id)` for records whose `(src_title, src_body)`
    /// repeats an earlier record's.
    pub duplicate_content: Vec<(String, String)>,
}

/// Reports exact-duplicate `(src_title, src_body)` pairs. Nothing is removed.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut first: HashMap<(&str, &str), &str> = HashMap::new();
    let mut duplicate_content = Vec::new();
    for rec in &corpus.records {
        let key = (rec.src_title.as_str(), rec.src_body.as_str());
        match first.get(&key) {
            Some(orig) => duplicate_content.push((orig.to_string(), rec.id.clone())),
            None => {
                first.insert(key, rec.id.as_str());
            }
        }
    }
    ValidationReport {
        records: corpus.len(),
        translated: corpus.iter().filter(|r| r.is_translated()).count(),
        duplicate_content,
    }
}

/// Ids present in `corpus`, for set-style checks.
pub fn id_set(corpus: &Corpus) -> HashSet<&str> {
    corpus.ids().collect()
}
