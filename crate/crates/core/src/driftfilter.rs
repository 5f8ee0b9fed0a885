//! Semantic-consistency filtering of translated pairs.
//!
//! For a record with English title/body `(q_en, p_en)` and translated
//! title/body `(q_tr, p_tr)` four cosines are computed: `sim(q_en, p_en)`,
//! `sim(q_tr, p_tr)`, `sim(q_en, q_tr)` and `sim(p_en, p_tr)`. A record is
//! kept only when all three criteria hold:
//!
//! * semantic drift `|sim(q_en, p_en) - sim(q_tr, p_tr)|` does not exceed
//!   `max_semantic_drift`,
//! * the title similarity `sim(q_en, q_tr)` is strictly above
//!   `min_translation_sim`,
//! * the body similarity `sim(p_en, p_tr)` is strictly above
//!   `min_translation_sim`.
//!
//! Titles are embedded with the query role and bodies with the passage role.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PairRecord};
use crate::embedder::{cosine, embed_batch, EmbedError, EmbedRequest, EmbeddingProvider, Role};
use crate::parallel::try_map_ordered;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_SEMANTIC_DRIFT: f64 = 0.05;
pub const DEFAULT_MIN_TRANSLATION_SIM: f64 = 0.85;

/// Slack on the drift comparison so that a drift which is exactly the
/// threshold in decimal, but lands an ulp above it after the f64
/// subtraction, is still kept.
pub const DRIFT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("record {0:?} is not translated")]
    Untranslated(String),
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("embedding failed for record {record_id:?}: {source}")]
    Provider {
        record_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("filtering aborted after {} reports: {source}", partial.len())]
    Aborted {
        partial: Vec<DriftReport>,
        #[source]
        source: Box<FilterError>,
    },
}

impl FilterError {
    pub fn is_retryable(&self) -> bool {
        match self {
            FilterError::Provider { source, .. } => source.is_retryable(),
            FilterError::Aborted { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}

pub type Result<T, E = FilterError> = std::result::Result<T, E>;

/// The four similarities a drift decision is based on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMetrics<T: Scalar = f64> {
    /// `sim(q_en, p_en)`
    pub sim_src: T,
    /// `sim(q_tr, p_tr)`
    pub sim_tgt: T,
    /// `sim(q_en, q_tr)`
    pub sim_query_xl: T,
    /// `sim(p_en, p_tr)`
    pub sim_passage_xl: T,
}

impl<T: Scalar> DriftMetrics<T> {
    pub fn new(sim_src: T, sim_tgt: T, sim_query_xl: T, sim_passage_xl: T) -> Self {
        Self {
            sim_src,
            sim_tgt,
            sim_query_xl,
            sim_passage_xl,
        }
    }

    pub fn semantic_drift(&self) -> f64 {
        (self.sim_src.to_f64_lossless() - self.sim_tgt.to_f64_lossless()).abs()
    }

    pub fn is_valid(&self) -> bool {
        [self.sim_src, self.sim_tgt, self.sim_query_xl, self.sim_passage_xl]
            .iter()
            .all(|v| v.is_finite() && (-T::one()..=T::one()).contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds<T: Scalar = f64> {
    pub max_semantic_drift: T,
    pub min_translation_sim: T,
}

impl Default for FilterThresholds<f64> {
    fn default() -> Self {
        Self {
            max_semantic_drift: DEFAULT_MAX_SEMANTIC_DRIFT,
            min_translation_sim: DEFAULT_MIN_TRANSLATION_SIM,
        }
    }
}

impl<T: Scalar> FilterThresholds<T> {
    pub fn new(max_semantic_drift: T, min_translation_sim: T) -> Result<Self> {
        let t = Self {
            max_semantic_drift,
            min_translation_sim,
        };
        t.validate()?;
        Ok(t)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.max_semantic_drift >= T::zero()) {
            return Err(FilterError::Thresholds(format!(
                "max_semantic_drift must be >= 0, got {}",
                self.max_semantic_drift
            )));
        }
        if !(-T::one()..=T::one()).contains(&self.min_translation_sim) {
            return Err(FilterError::Thresholds(format!(
                "min_translation_sim must lie in [-1, 1], got {}",
                self.min_translation_sim
            )));
        }
        Ok(())
    }
}

/// A violated criterion. Variants are ordered as the criteria are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftReason {
    SemanticDrift,
    QueryDrift,
    PassageDrift,
}

impl DriftReason {
    pub const ALL: [DriftReason; 3] = [
        DriftReason::SemanticDrift,
        DriftReason::QueryDrift,
        DriftReason::PassageDrift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DriftReason::SemanticDrift => "semantic_drift",
            DriftReason::QueryDrift => "query_drift",
            DriftReason::PassageDrift => "passage_drift",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Discard,
}

/// Decision part of a [`DriftReport`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub decision: Decision,
    pub reasons: BTreeSet<DriftReason>,
}

impl Verdict {
    pub fn first_reason(&self) -> Option<DriftReason> {
        self.reasons.first().copied()
    }
}

/// Applies the three criteria. Pure; every violated criterion is listed.
/// A NaN similarity fails its criterion.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn decide<T: Scalar>(metrics: &DriftMetrics<T>, t: &FilterThresholds<T>) -> Verdict {
    let max_drift = t.max_semantic_drift.to_f64_lossless();
    let min_sim = t.min_translation_sim.to_f64_lossless();
    let mut reasons = BTreeSet::new();
    if metrics.semantic_drift() - max_drift > DRIFT_SLACK {
        reasons.insert(DriftReason::SemanticDrift);
    }
    if !(metrics.sim_query_xl.to_f64_lossless() > min_sim) {
        reasons.insert(DriftReason::QueryDrift);
    }
    if !(metrics.sim_passage_xl.to_f64_lossless() > min_sim) {
        reasons.insert(DriftReason::PassageDrift);
    }
    let decision = if reasons.is_empty() {
        Decision::Keep
    } else {
        Decision::Discard
    };
    Verdict { decision, reasons }
}

/// Per-record filter outcome; one line of the reports file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub record_id: String,
    #[serde(flatten)]
    pub metrics: DriftMetrics<f64>,
    pub decision: Decision,
    pub reasons: Vec<DriftReason>,
}

impl DriftReport {
    pub fn new(record_id: impl Into<String>, metrics: DriftMetrics<f64>, verdict: Verdict) -> Self {
        Self {
            record_id: record_id.into(),
            metrics,
            decision: verdict.decision,
            reasons: verdict.reasons.into_iter().collect(),
        }
    }

    pub fn first_reason(&self) -> Option<DriftReason> {
        self.reasons.first().copied()
    }
}

/// Computes the four cosines of one translated record.
pub fn compute_metrics<P: EmbeddingProvider + ?Sized>(
    record: &PairRecord,
    provider: &P,
) -> Result<DriftMetrics<f64>> {
    let mut out = compute_group(std::slice::from_ref(record), provider)?;
    Ok(out.pop().expect("one record in, one metric set out"))
}

// Embeds a group of records with two requests (titles, bodies).
fn compute_group<P: EmbeddingProvider + ?Sized>(
    records: &[PairRecord],
    provider: &P,
) -> Result<Vec<DriftMetrics<f64>>> {
    let mut titles = Vec::with_capacity(records.len() * 2);
    let mut bodies = Vec::with_capacity(records.len() * 2);
    for r in records {
        let (tt, tb) = r
            .translation()
            .ok_or_else(|| FilterError::Untranslated(r.id.clone()))?;
        titles.extend([r.src_title.clone(), tt.to_string()]);
        bodies.extend([r.src_body.clone(), tb.to_string()]);
    }
    let first_id = || records.first().map(|r| r.id.clone()).unwrap_or_default();
    let provider_err = |source| FilterError::Provider {
        record_id: first_id(),
        source,
    };
    let q = embed_batch(provider, &EmbedRequest::new(titles, Role::Query, provider.model_id()))
        .map_err(provider_err)?;
    let p = embed_batch(provider, &EmbedRequest::new(bodies, Role::Passage, provider.model_id()))
        .map_err(provider_err)?;

    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (q_src, q_tgt, p_src, p_tgt) = (&q[2 * i], &q[2 * i + 1], &p[2 * i], &p[2 * i + 1]);
            let sim = |a, b| {
                cosine(a, b).map_err(|source| FilterError::Provider {
                    record_id: r.id.clone(),
                    source,
                })
            };
            Ok(DriftMetrics {
                sim_src: sim(q_src, p_src)?,
                sim_tgt: sim(q_tgt, p_tgt)?,
                sim_query_xl: sim(q_src, q_tgt)?,
                sim_passage_xl: sim(p_src, p_tgt)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FilterStats {
    pub total: usize,
    pub kept: usize,
    pub discarded: usize,
    /// Kept fraction; `None` for an empty input.
    pub retention: Option<f64>,
    /// Discards per criterion, counting every violated criterion.
    pub violations: BTreeMap<DriftReason, usize>,
    /// Discards attributed to the first violated criterion only.
    pub first_violation: BTreeMap<DriftReason, usize>,
}

impl FilterStats {
    pub fn from_reports(reports: &[DriftReport]) -> Self {
        let mut stats = FilterStats {
            total: reports.len(),
            ..Default::default()
        };
        for r in reports {
            match r.decision {
                Decision::Keep => stats.kept += 1,
                Decision::Discard => stats.discarded += 1,
            }
            for reason in &r.reasons {
                *stats.violations.entry(*reason).or_default() += 1;
            }
            if let Some(first) = r.first_reason() {
                *stats.first_violation.entry(first).or_default() += 1;
            }
        }
        stats.retention = (stats.total > 0).then(|| stats.kept as f64 / stats.total as f64);
        stats
    }

    pub fn retention_display(&self) -> String {
        match self.retention {
            Some(r) => format!("{:.2}%", 100.0 * r),
            None => "n/a".to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FilterOutcome {
    pub kept: Corpus,
    pub reports: Vec<DriftReport>,
    pub stats: FilterStats,
}

/// Execution knobs for [`filter_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterOptions {
    /// Records embedded per provider round-trip pair.
    pub group_size: usize,
    pub workers: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            group_size: 32,
            workers: 4,
        }
    }
}

/// Splits a translated corpus into kept records and per-record reports.
pub fn filter_corpus<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    thresholds: &FilterThresholds<f64>,
    opts: FilterOptions,
) -> Result<FilterOutcome> {
    thresholds.validate()?;
    if let Some(r) = corpus.iter().find(|r| !r.is_translated()) {
        return Err(FilterError::Untranslated(r.id.clone()));
    }
    let groups: Vec<&[PairRecord]> = corpus.records.chunks(opts.group_size.max(1)).collect();
    let per_group = try_map_ordered(&groups, opts.workers, |g| {
        let metrics = compute_group(g, provider)?;
        Ok::<_, FilterError>(
            g.iter()
                .zip(metrics)
                .map(|(r, m)| DriftReport::new(r.id.clone(), m, decide(&m, thresholds)))
                .collect::<Vec<_>>(),
        )
    });
    let reports: Vec<DriftReport> = match per_group {
        Ok(groups) => groups.into_iter().flatten().collect(),
        Err((done, e)) => {
            return Err(FilterError::Aborted {
                partial: done.into_iter().flatten().collect(),
                source: Box::new(e),
            })
        }
    };
    let kept = corpus
        .records
        .iter()
        .zip(&reports)
        .filter(|(_, rep)| rep.decision == Decision::Keep)
        .map(|(r, _)| r.clone())
        .collect();
    let stats = FilterStats::from_reports(&reports);
    log::info!(
        "filter: kept {}/{} ({})",
        stats.kept,
        stats.total,
        stats.retention_display()
    );
    Ok(FilterOutcome {
        kept: Corpus {
            records: kept,
            source_uri: format!("{}#kept", corpus.source_uri),
        },
        reports,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::HashProvider;

    fn m(a: f64, b: f64, c: f64, d: f64) -> DriftMetrics {
        DriftMetrics::new(a, b, c, d)
    }

    fn reasons(v: &Verdict) -> Vec<DriftReason> {
        v.reasons.iter().copied().collect()
    }

    #[test]
    fn keeps_when_all_three_hold() {
        let v = decide(&m(0.90, 0.88, 0.90, 0.92), &FilterThresholds::default());
        assert_eq!(v.decision, Decision::Keep);
        assert!(v.reasons.is_empty());
    }

    #[test]
    fn semantic_drift_alone() {
        let v = decide(&m(0.90, 0.80, 0.95, 0.95), &FilterThresholds::default());
        assert_eq!(v.decision, Decision::Discard);
        assert_eq!(reasons(&v), [DriftReason::SemanticDrift]);
    }

    #[test]
    fn translation_sim_at_threshold_is_discarded() {
        let v = decide(&m(0.90, 0.89, 0.85, 0.95), &FilterThresholds::default());
        assert_eq!(reasons(&v), [DriftReason::QueryDrift]);
    }

    #[test]
    fn drift_at_threshold_is_kept() {
        let v = decide(&m(0.90, 0.85, 0.95, 0.95), &FilterThresholds::default());
        assert_eq!(v.decision, Decision::Keep);
    }

    #[test]
    fn all_reasons_listed_first_is_semantic() {
        let v = decide(&m(0.9, 0.1, 0.2, 0.3), &FilterThresholds::default());
        assert_eq!(reasons(&v), DriftReason::ALL);
        assert_eq!(v.first_reason(), Some(DriftReason::SemanticDrift));
    }

    #[test]
    fn f32_metrics_decide_the_same() {
        let t = FilterThresholds::<f32>::new(0.05, 0.85).unwrap();
        let v = decide(&DriftMetrics::<f32>::new(0.90, 0.88, 0.90, 0.92), &t);
        assert_eq!(v.decision, Decision::Keep);
    }

    #[test]
    fn threshold_validation() {
        assert!(FilterThresholds::new(-0.1, 0.85).is_err());
        assert!(FilterThresholds::new(0.05, 1.5).is_err());
        assert!(FilterThresholds::new(0.0, -1.0).is_ok());
    }

    #[test]
    fn report_line_format() {
        let metrics = m(0.9, 0.8, 0.95, 0.95);
        let rep = DriftReport::new("r1", metrics, decide(&metrics, &FilterThresholds::default()));
        let line = serde_json::to_string(&rep).unwrap();
        assert_eq!(
            line,
            r#"{"record_id":"r1","sim_src":0.9,"sim_tgt":0.8,"sim_query_xl":0.95,"sim_passage_xl":0.95,"decision":"discard","reasons":["semantic_drift"]}"#
        );
        let back: DriftReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rep);
    }

    fn translated(id: &str, title: &str, body: &str, tt: &str, tb: &str) -> PairRecord {
        PairRecord::new(id, "en", "hy", title, body).with_translation(tt, tb)
    }

    #[test]
    fn identical_translation_gives_unit_cross_similarity() {
        let r = translated("a", "How do I cook rice", "Boil water first", "How do I cook rice", "Boil water first");
        let got = compute_metrics(&r, &HashProvider::default()).unwrap();
        assert!((got.sim_query_xl - 1.0).abs() < 1e-12);
        assert!((got.sim_passage_xl - 1.0).abs() < 1e-12);
        assert!(got.semantic_drift().abs() < 1e-12);
    }

    #[test]
    fn same_title_unrelated_body() {
        let r = translated("a", "Title", "A body about cats", "Title", "Something else entirely");
        let got = compute_metrics(&r, &HashProvider::default()).unwrap();
        assert!((got.sim_query_xl - 1.0).abs() < 1e-12);
        assert!(got.sim_passage_xl < 0.9);
    }

    #[test]
    fn untranslated_record_is_rejected() {
        let r = PairRecord::new("u", "en", "hy", "t", "b");
        assert!(matches!(
            compute_metrics(&r, &HashProvider::default()),
            Err(FilterError::Untranslated(id)) if id == "u"
        ));
    }

    #[test]
    fn empty_corpus_reports_na() {
        let out = filter_corpus(
            &Corpus::default(),
            &HashProvider::default(),
            &FilterThresholds::default(),
            FilterOptions::default(),
        )
        .unwrap();
        assert!(out.kept.is_empty() && out.reports.is_empty());
        assert_eq!(out.stats.retention, None);
        assert_eq!(out.stats.retention_display(), "n/a");
    }

    #[test]
    fn identity_corpus_is_fully_kept() {
        let recs = (0..50)
            .map(|i| {
                let (t, b) = (format!("title {i}"), format!("body {i}"));
                translated(&format!("r{i}"), &t, &b, &t, &b)
            })
            .collect();
        let c = Corpus::new(recs, "mem").unwrap();
        let out = filter_corpus(&c, &HashProvider::default(), &FilterThresholds::default(), FilterOptions { group_size: 7, workers: 3 }).unwrap();
        assert_eq!(out.kept.records, c.records);
        assert_eq!(out.stats.retention, Some(1.0));
    }
}
