use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{file_err, EvalError, Result, EMBED_CHUNK};
use crate::embedder::{cosine, embed_batch, EmbedRequest, EmbeddingProvider, EmbeddingVector, Role};

/// Queries, a document pool, relevance judgments and the cutoff `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalTask {
    pub queries: Vec<(String, String)>,
    pub documents: Vec<(String, String)>,
    pub qrels: HashMap<String, BTreeSet<String>>,
    pub k: usize,
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvalError::InvalidTask(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.queries.is_empty() || self.documents.is_empty() {
            return bad("needs at least one query and one document".into());
        }
        let mut doc_ids = HashSet::with_capacity(self.documents.len());
        for (id, _) in &self.documents {
            if !doc_ids.insert(id.as_str()) {
                return bad(format!("duplicate document id {id:?}"));
            }
        }
        let mut query_ids = HashSet::with_capacity(self.queries.len());
        for (id, _) in &self.queries {
            if !query_ids.insert(id.as_str()) {
                return bad(format!("duplicate query id {id:?}"));
            }
            match self.qrels.get(id) {
                Some(rel) if !rel.is_empty() => {}
                _ => return bad(format!("query {id:?} has no relevant document")),
            }
        }
        for (q, docs) in &self.qrels {
            if !query_ids.contains(q.as_str()) {
                return bad(format!("qrels mention unknown query {q:?}"));
            }
            if let Some(d) = docs.iter().find(|d| !doc_ids.contains(d.as_str())) {
                return bad(format!("qrels for {q:?} reference unknown document {d:?}"));
            }
        }
        Ok(())
    }
}

fn embed_all<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    items: &[(String, String)],
    role: Role,
) -> Result<Vec<EmbeddingVector>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(EMBED_CHUNK) {
        let req = EmbedRequest::new(
            chunk.iter().map(|(_, t)| t.clone()).collect(),
            role,
            provider.model_id(),
        )
        .with_keys(chunk.iter().map(|(id, _)| id.clone()).collect());
        out.extend(embed_batch(provider, &req)?);
    }
    Ok(out)
}

/// Top-k accuracy (0–100) of `provider` on `task`.
///
/// Documents are ranked by cosine similarity, descending, with ties going
/// to the smaller document id.
pub fn retrieval_accuracy<P: EmbeddingProvider + ?Sized>(task: &RetrievalTask, provider: &P) -> Result<f64> {
    task.validate()?;
    let q = embed_all(provider, &task.queries, Role::Query)?;
    let d = embed_all(provider, &task.documents, Role::Passage)?;
    let doc_ids: Vec<&str> = task.documents.iter().map(|(id, _)| id.as_str()).collect();
    let relevant: Vec<&BTreeSet<String>> = task.queries.iter().map(|(id, _)| &task.qrels[id]).collect();
    Ok(hit_rates_from_vectors(&q, &d, &doc_ids, &relevant, &[task.k])?[0])
}

/// 0-based rank of the best-placed relevant document.
///
/// A document outranks another when its score is higher, or equal with a
/// smaller id. The rank of document `r` is the number of documents that
/// outrank it, so no sort is needed.
pub fn rank_of_first_relevant(scores: &[f64], doc_ids: &[&str], relevant: &BTreeSet<String>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (r, &rid) in doc_ids.iter().enumerate() {
        if !relevant.contains(rid) {
            continue;
        }
        let s = scores[r];
        let rank = scores
            .iter()
            .zip(doc_ids)
            .filter(|&(&o, &oid)| o > s || (o == s && oid < rid))
            .count();
        best = Some(best.map_or(rank, |b| b.min(rank)));
    }
    best
}

/// Hit rates (0–100) for several cutoffs over already-embedded queries and
/// documents. `relevant[i]` holds the relevant ids of query `i`.
pub fn hit_rates_from_vectors(
    queries: &[EmbeddingVector],
    documents: &[EmbeddingVector],
    doc_ids: &[&str],
    relevant: &[&BTreeSet<String>],
    ks: &[usize],
) -> Result<Vec<f64>> {
    if queries.len() != relevant.len() || documents.len() != doc_ids.len() {
        return Err(EvalError::InvalidTask("vector and id counts differ".into()));
    }
    if queries.is_empty() {
        return Err(EvalError::InvalidTask("no queries".into()));
    }
    let mut ranks = Vec::with_capacity(queries.len());
    for (qv, rel) in queries.iter().zip(relevant) {
        let scores = documents
            .iter()
            .map(|dv| cosine(qv, dv))
            .collect::<std::result::Result<Vec<f64>, _>>()?;
        ranks.push(rank_of_first_relevant(&scores, doc_ids, rel));
    }
    let n = queries.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            100.0 * hits as f64 / n
        })
        .collect())
}

#[derive(Deserialize)]
struct IdText {
    id: String,
    text: String,
}

fn read_id_text(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IdText =
            serde_json::from_str(&line).map_err(|e| file_err(path, format!("line {}: {e}", i + 1)))?;
        out.push((rec.id, rec.text));
    }
    Ok(out)
}

/// Tab-separated `query_id<TAB>doc_id[<TAB>...]`; a leading header line
/// starting with `query_id` is skipped, as are extra columns.
fn read_qrels(path: &Path) -> Result<HashMap<String, BTreeSet<String>>> {
    let reader = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut qrels: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() || (i == 0 && line.starts_with("query_id")) {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(q), Some(d)) if !q.is_empty() && !d.is_empty() => {
                qrels.entry(q.to_string()).or_default().insert(d.trim_end().to_string());
            }
            _ => return Err(file_err(path, format!("line {}: expected query_id<TAB>doc_id", i + 1))),
        }
    }
    Ok(qrels)
}

pub fn load_retrieval_task(queries: &Path, documents: &Path, qrels: &Path, k: usize) -> Result<RetrievalTask> {
    let task = RetrievalTask {
        queries: read_id_text(queries)?,
        documents: read_id_text(documents)?,
        qrels: read_qrels(qrels)?,
        k,
    };
    task.validate()?;
    Ok(task)
}
