use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{file_err, load_retrieval_task, load_sts_task, retrieval_accuracy, sts_score, EvalError, Result, DEFAULT_RETRIEVAL_K};
use crate::embedder::EmbeddingProvider;

/// A task as configured in a benchmark file. Paths are relative to the
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskConfig {
    Retrieval {
        name: String,
        queries: PathBuf,
        documents: PathBuf,
        qrels: PathBuf,
        #[serde(default = "default_k")]
        k: usize,
    },
    Sts {
        name: String,
        pairs: PathBuf,
    },
}

fn default_k() -> usize {
    DEFAULT_RETRIEVAL_K
}

impl TaskConfig {
    pub fn name(&self) -> &str {
        match self {
            TaskConfig::Retrieval { name, .. } | TaskConfig::Sts { name, .. } => name,
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            TaskConfig::Retrieval {
                queries,
                documents,
                qrels,
                ..
            } => {
                fix(queries);
                fix(documents);
                fix(qrels);
            }
            TaskConfig::Sts { pairs, .. } => fix(pairs),
        }
    }

    pub fn input_paths(&self) -> Vec<&Path> {
        match self {
            TaskConfig::Retrieval {
                queries,
                documents,
                qrels,
                ..
            } => vec![queries, documents, qrels],
            TaskConfig::Sts { pairs, .. } => vec![pairs],
        }
    }

    fn run<P: EmbeddingProvider + ?Sized>(&self, provider: &P) -> Result<TaskScore> {
        match self {
            TaskConfig::Retrieval {
                queries,
                documents,
                qrels,
                k,
                ..
            } => {
                let task = load_retrieval_task(queries, documents, qrels, *k)?;
                Ok(TaskScore {
                    metric: format!("top{k}_accuracy"),
                    k: Some(*k),
                    score: retrieval_accuracy(&task, provider)?,
                })
            }
            TaskConfig::Sts { pairs, .. } => {
                let task = load_sts_task(pairs)?;
                Ok(TaskScore {
                    metric: "spearman".into(),
                    k: None,
                    score: sts_score(&task, provider)?,
                })
            }
        }
    }
}

/// The configured task set.
///
/// ```toml
/// [[tasks]]
/// kind = "retrieval"
/// name = "Retrieval"
/// queries = "queries.jsonl"
/// documents = "docs.jsonl"
/// qrels = "qrels.tsv"
/// k = 20
///
/// [[tasks]]
/// kind = "sts"
/// name = "STS [hye]"
/// pairs = "sts.jsonl"
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
}

impl BenchmarkConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| file_err(path, e))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for t in &mut self.tasks {
            t.resolve(base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name()) {
                return Err(EvalError::InvalidTask(format!("duplicate task name {:?}", t.name())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub metric: String,
    pub k: Option<usize>,
    /// 0–100.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task: String,
    pub error: String,
}

/// Per-task scores in configuration order and their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub per_task: IndexMap<String, TaskScore>,
    /// Mean of `per_task`; absent when any task failed.
    pub average: Option<f64>,
    pub failures: Vec<TaskFailure>,
}

impl BenchmarkResult {
    /// Builds a complete result from already known `(task, score)` pairs.
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut r = Self::default();
        for (name, score) in scores {
            r.per_task.insert(
                name.to_string(),
                TaskScore {
                    metric: "external".into(),
                    k: None,
                    score,
                },
            );
        }
        r.recompute_average();
        r
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn score(&self, task: &str) -> Option<f64> {
        self.per_task.get(task).map(|s| s.score)
    }

    pub fn recompute_average(&mut self) {
        self.average = if self.per_task.is_empty() || self.is_partial() {
            None
        } else {
            Some(self.per_task.values().map(|s| s.score).sum::<f64>() / self.per_task.len() as f64)
        };
    }
}

/// Runs every configured task with its own metric, then appends
/// externally computed scores (e.g. an MTEB aggregate) verbatim.
///
/// A failing task is recorded in `failures` and leaves the average unset;
/// the remaining tasks still run.
pub fn run_benchmark<P: EmbeddingProvider + ?Sized>(
    config: &BenchmarkConfig,
    provider: &P,
    external: &[(String, f64)],
) -> Result<BenchmarkResult> {
    config.validate()?;
    if config.tasks.is_empty() && external.is_empty() {
        return Err(EvalError::InvalidTask("no tasks configured".into()));
    }
    let mut result = BenchmarkResult::default();
    for task in &config.tasks {
        match task.run(provider) {
            Ok(score) => {
                log::info!("{}: {} = {:.2}", task.name(), score.metric, score.score);
                result.per_task.insert(task.name().to_string(), score);
            }
            Err(e) => {
                log::error!("task {} failed: {e}", task.name());
                result.failures.push(TaskFailure {
                    task: task.name().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    for (name, score) in external {
        result.per_task.insert(
            name.clone(),
            TaskScore {
                metric: "external".into(),
                k: None,
                score: *score,
            },
        );
    }
    result.recompute_average();
    Ok(result)
}

/// One line of a benchmark report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub task: String,
    pub metric: String,
    pub k: Option<usize>,
    pub score: Option<f64>,
}

pub const AVERAGE_ROW: &str = "average";

impl BenchmarkResult {
    /// Report rows: one per task, failed tasks with a null score, then the
    /// `average` summary row.
    pub fn report_lines(&self) -> Vec<ReportLine> {
        let mut lines: Vec<ReportLine> = self
            .per_task
            .iter()
            .map(|(task, s)| ReportLine {
                task: task.clone(),
                metric: s.metric.clone(),
                k: s.k,
                score: Some(s.score),
            })
            .collect();
        lines.extend(self.failures.iter().map(|f| ReportLine {
            task: f.task.clone(),
            metric: "failed".into(),
            k: None,
            score: None,
        }));
        lines.push(ReportLine {
            task: AVERAGE_ROW.into(),
            metric: "mean".into(),
            k: None,
            score: self.average,
        });
        lines
    }

    pub fn from_report_lines(lines: &[ReportLine]) -> Self {
        let mut r = Self::default();
        for l in lines {
            if l.task == AVERAGE_ROW && l.metric == "mean" {
                continue;
            }
            match l.score {
                Some(score) => {
                    r.per_task.insert(
                        l.task.clone(),
                        TaskScore {
                            metric: l.metric.clone(),
                            k: l.k,
                            score,
                        },
                    );
                }
                None => r.failures.push(TaskFailure {
                    task: l.task.clone(),
                    error: "failed".into(),
                }),
            }
        }
        r.recompute_average();
        r
    }
}

pub fn write_report(result: &BenchmarkResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| file_err(path, e))?);
    for line in result.report_lines() {
        let json = serde_json::to_string(&line).expect("report lines serialize");
        writeln!(out, "{json}").map_err(|e| file_err(path, e))?;
    }
    out.flush().map_err(|e| file_err(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<BenchmarkResult> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|e| file_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(BenchmarkResult::from_report_lines(&lines))
}
