use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbedRequest, EmbeddingProvider, EmbeddingVector, Result, Role};

/// One line of a precomputed-vector file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorEntry {
    pub id: String,
    pub role: Role,
    pub dim: usize,
    pub values: Vec<f32>,
}

fn file_err(path: &Path, message: impl std::fmt::Display) -> EmbedError {
    EmbedError::File {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn read_vector_file(path: impl AsRef<Path>) -> Result<Vec<VectorEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: VectorEntry = serde_json::from_str(&line)
            .map_err(|e| file_err(path, format!("line {}: {e}", i + 1)))?;
        if entry.dim != entry.values.len() || entry.dim == 0 {
            return Err(file_err(
                path,
                format!(
                    "line {}: dim {} but {} values",
                    i + 1,
                    entry.dim,
                    entry.values.len()
                ),
            ));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_vector_file<'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = &'a VectorEntry>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| file_err(path, e))?);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("vector entries serialize");
        writeln!(out, "{line}").map_err(|e| file_err(path, e))?;
    }
    out.flush().map_err(|e| file_err(path, e))
}

/// Serves vectors stored ahead of time, looked up by `(role, key)`.
///
/// The key of a request text is its explicit key when the request carries
/// keys, otherwise the text itself.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedProvider {
    model_id: String,
    vectors: HashMap<(Role, String), Vec<f32>>,
}

impl PrecomputedProvider {
    pub fn from_entries(
        model_id: impl Into<String>,
        entries: impl IntoIterator<Item = VectorEntry>,
    ) -> Result<Self> {
        let mut vectors = HashMap::new();
        for e in entries {
            EmbeddingVector::new(e.values.clone(), e.role)?;
            let key = (e.role, e.id);
            if vectors.contains_key(&key) {
                return Err(EmbedError::Config(format!(
                    "duplicate {} vector for {:?}",
                    key.0, key.1
                )));
            }
            vectors.insert(key, e.values);
        }
        Ok(Self {
            model_id: model_id.into(),
            vectors,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries = read_vector_file(path)?;
        Self::from_entries(format!("precomputed:{}", path.display()), entries)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        (0..req.texts.len())
            .map(|i| {
                let key = req.key(i);
                let values = self
                    .vectors
                    .get(&(req.role, key.to_string()))
                    .ok_or_else(|| EmbedError::MissingVector {
                        key: key.to_string(),
                        role: req.role,
                    })?;
                EmbeddingVector::new(values.clone(), req.role)
            })
            .collect()
    }
}

/// Memoizes another provider's vectors by `(role, key)` so they can be
/// written out as a precomputed-vector file and replayed later.
pub struct CachingProvider<P> {
    inner: P,
    cache: Mutex<BTreeMap<(Role, String), EmbeddingVector>>,
}

impl<P: EmbeddingProvider> CachingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entries(&self) -> Vec<VectorEntry> {
        let cache = self.cache.lock().expect("cache lock poisoned");
        cache
            .iter()
            .map(|((role, id), v)| VectorEntry {
                id: id.clone(),
                role: *role,
                dim: v.dim(),
                values: v.values().to_vec(),
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_vector_file(path, &self.entries())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachingProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<EmbeddingVector>> {
        let missing: Vec<usize> = {
            let cache = self.cache.lock().expect("cache lock poisoned");
            (0..req.texts.len())
                .filter(|&i| !cache.contains_key(&(req.role, req.key(i).to_string())))
                .collect()
        };
        if !missing.is_empty() {
            let sub = EmbedRequest {
                texts: missing.iter().map(|&i| req.texts[i].clone()).collect(),
                role: req.role,
                model_id: req.model_id.clone(),
                keys: req
                    .keys
                    .as_ref()
                    .map(|k| missing.iter().map(|&i| k[i].clone()).collect()),
            };
            let fresh = self.inner.embed(&sub)?;
            if fresh.len() != missing.len() {
                return Err(EmbedError::CountMismatch {
                    expected: missing.len(),
                    got: fresh.len(),
                });
            }
            let mut cache = self.cache.lock().expect("cache lock poisoned");
            for (&i, v) in missing.iter().zip(fresh) {
                cache.insert((req.role, req.key(i).to_string()), v);
            }
        }
        let cache = self.cache.lock().expect("cache lock poisoned");
        Ok((0..req.texts.len())
            .map(|i| cache[&(req.role, req.key(i).to_string())].clone())
            .collect())
    }
}
