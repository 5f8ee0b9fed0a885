//! Declarative experiment runs: translate, filter, sample, train, merge and
//! evaluate from one config file, with a manifest that makes reruns cheap.
//!
//! ```toml
//! out_dir = "runs/hy"
//! sample_sizes = [10000, 50000]
//! seeds = [7]
//!
//! [providers.e5]
//! kind = "http"
//! endpoint = "http://localhost:8080/embed"
//! model_id = "{model}"
//!
//! [[stages]]
//! name = "translate"
//! kind = "translate"
//! [stages.params]
//! input = "reddit_en.jsonl"
//! job = { model_name = "google/gemma-2-27b-it", target_language = "Armenian", target_lang_code = "hy", endpoint = "http://localhost:8000/v1/chat/completions" }
//! ```
//!
//! Every stage runs once per branch. Before the `sample` stage there is a
//! single branch (`root`); `sample` forks one branch per size and seed
//! (`n10000_s7`, ...) and later stages run in each of them.
//!
//! `out_dir/manifest.jsonl` gets one line per executed stage and branch.
//! Lines hold no timestamps and only paths relative to `out_dir`, so the
//! same config and inputs give the same manifest bytes. A stage whose
//! fingerprint (parameters plus input digests) matches its last completed
//! line and whose outputs still hash to the recorded digests is skipped
//! and appends nothing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Component, Path, PathBuf};
use std::process::Command;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_pairs, sample, write_pairs, Corpus};
use crate::datagen::{run_translation, TranslationJobConfig};
use crate::driftfilter::{filter_corpus, FilterOptions, FilterThresholds};
use crate::embedder::ProviderConfig;
use crate::evalbench::{read_report, run_benchmark, write_report, BenchmarkConfig, BenchmarkResult, ComparisonTable};
use crate::merge::{load_archive, merge_archives, save_archive, MergeSpec};
use crate::parallel::try_map_ordered;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ROOT_BRANCH: &str = "root";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("stage {stage:?} failed on branch {branch:?}: {message}")]
    Stage {
        stage: String,
        branch: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Each size is drawn with its own stream, derived from seed and size.
    #[default]
    Independent,
    /// Smaller samples are subsets of larger ones for the same seed.
    Nested,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Translate,
    Filter,
    Sample,
    Train,
    Merge,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub kind: StageKind,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sample_mode: SampleMode,
    /// Branches run concurrently up to this many at a time.
    #[serde(default = "default_workers")]
    pub branch_workers: usize,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    pub stages: Vec<StageConfig>,
    /// Directory that relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_workers() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslateParams {
    input: PathBuf,
    job: TranslationJobConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterParams {
    #[serde(default)]
    input: Option<PathBuf>,
    provider: String,
    #[serde(default = "default_max_drift")]
    max_drift: f64,
    #[serde(default = "default_min_sim")]
    min_sim: f64,
    #[serde(default = "default_group")]
    group_size: usize,
}

fn default_max_drift() -> f64 {
    crate::driftfilter::DEFAULT_MAX_SEMANTIC_DRIFT
}
fn default_min_sim() -> f64 {
    crate::driftfilter::DEFAULT_MIN_TRANSLATION_SIM
}
fn default_group() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleParams {
    #[serde(default)]
    input: Option<PathBuf>,
}

/// `args` may contain `{pairs}`, `{out}` and `{branch}`; no shell is involved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainParams {
    program: String,
    #[serde(default)]
    args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeParams {
    base: PathBuf,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Main,
    Merged,
    Base,
}

impl Variant {
    fn as_str(self) -> &'static str {
        match self {
            Variant::Main => "main",
            Variant::Merged => "merged",
            Variant::Base => "base",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalParams {
    benchmark: PathBuf,
    provider: String,
    /// Checkpoints to score. Empty means the provider exactly as configured.
    #[serde(default)]
    variants: Vec<Variant>,
    /// Substituted for `{model}` in the base variant.
    #[serde(default)]
    base_model: Option<String>,
    #[serde(default)]
    external: BTreeMap<String, f64>,
}

fn params<T: DeserializeOwned>(stage: &StageConfig) -> Result<T> {
    toml::Value::Table(stage.params.clone())
        .try_into()
        .map_err(|e| PipelineError::Config(format!("stage {:?}: {e}", stage.name)))
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.out_dir.is_relative() {
            cfg.out_dir = cfg.base_dir.join(&cfg.out_dir);
        }
        for p in cfg.providers.values_mut() {
            p.resolve_paths(&cfg.base_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.stages.is_empty() {
            return bad("no stages configured".into());
        }
        let mut names = HashSet::new();
        let mut have_corpus = false;
        let mut sampled = false;
        let mut trained = false;
        let mut merged = false;
        for s in &self.stages {
            if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name == ".." || s.name == "." {
                return bad(format!("stage name {:?} is not a plain file name", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate stage name {:?}", s.name));
            }
            let need_provider = |name: &str| {
                if self.providers.contains_key(name) {
                    Ok(())
                } else {
                    Err(PipelineError::Config(format!("stage {:?}: unknown provider {name:?}", s.name)))
                }
            };
            match s.kind {
                StageKind::Translate => {
                    let p: TranslateParams = params(s)?;
                    p.job.validate().map_err(|e| PipelineError::Config(format!("stage {:?}: {e}", s.name)))?;
                    have_corpus = true;
                }
                StageKind::Filter => {
                    let p: FilterParams = params(s)?;
                    need_provider(&p.provider)?;
                    FilterThresholds::new(p.max_drift, p.min_sim)
                        .map_err(|e| PipelineError::Config(format!("stage {:?}: {e}", s.name)))?;
                    if p.input.is_none() && !have_corpus {
                        return bad(format!("stage {:?} has no input corpus", s.name));
                    }
                    have_corpus = true;
                }
                StageKind::Sample => {
                    let p: SampleParams = params(s)?;
                    if sampled {
                        return bad("only one sample stage is allowed".into());
                    }
                    if p.input.is_none() && !have_corpus {
                        return bad(format!("stage {:?} has no input corpus", s.name));
                    }
                    if self.sample_sizes.is_empty() || self.seeds.is_empty() {
                        return bad("a sample stage needs sample_sizes and seeds".into());
                    }
                    if self.sample_sizes.contains(&0) {
                        return bad("sample sizes must be positive".into());
                    }
                    sampled = true;
                    have_corpus = true;
                }
                StageKind::Train => {
                    let p: TrainParams = params(s)?;
                    if p.program.trim().is_empty() {
                        return bad(format!("stage {:?}: empty program", s.name));
                    }
                    if !have_corpus {
                        return bad(format!("stage {:?} has no input corpus", s.name));
                    }
                    trained = true;
                }
                StageKind::Merge => {
                    let p: MergeParams = params(s)?;
                    MergeSpec::new(p.alpha).map_err(|e| PipelineError::Config(format!("stage {:?}: {e}", s.name)))?;
                    if !trained {
                        return bad(format!("stage {:?} needs an earlier train stage", s.name));
                    }
                    merged = true;
                }
                StageKind::Eval => {
                    let p: EvalParams = params(s)?;
                    need_provider(&p.provider)?;
                    for v in &p.variants {
                        let ok = match v {
                            Variant::Main => trained,
                            Variant::Merged => merged,
                            Variant::Base => p.base_model.is_some(),
                        };
                        if !ok {
                            return bad(format!("stage {:?}: variant {} has no checkpoint", s.name, v.as_str()));
                        }
                    }
                }
            }
        }
        if self.branch_workers == 0 {
            return bad("branch_workers must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub kind: StageKind,
    pub branch: String,
    pub status: StageStatus,
    pub fingerprint: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub summary: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestEntry {
    pub fn output(&self, name: &str) -> Option<&FileDigest> {
        self.outputs.iter().find(|o| o.name == name)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn rel(out_dir: &Path, p: &Path) -> String {
    let r = p.strip_prefix(out_dir).unwrap_or(p);
    r.components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// Seed for one size in independent mode.
pub fn derived_seed(seed: u64, size: usize) -> u64 {
    let d = Sha256::digest(format!("sample:{seed}:{size}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn branch_name(size: usize, seed: u64) -> String {
    format!("n{size}_s{seed}")
}

/// What earlier stages left for later ones on a branch.
#[derive(Clone, Debug, Default)]
struct BranchState {
    name: String,
    sample: Option<(usize, u64)>,
    corpus: Option<PathBuf>,
    main: Option<PathBuf>,
    merged: Option<PathBuf>,
}

/// Outcome of [`run_pipeline`].
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub executed: Vec<(String, String)>,
    pub skipped: Vec<(String, String)>,
}

struct Planned {
    fingerprint: String,
    inputs: Vec<FileDigest>,
}

struct Done {
    outputs: Vec<(String, PathBuf)>,
    summary: Value,
}

/// Executes all stages in order, skipping those already done.
///
/// On the first failing stage the failure is recorded in the manifest and
/// the run stops; later stages are not touched.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let manifest_path = out.join(MANIFEST_FILE);
    let mut last: HashMap<(String, String), ManifestEntry> = HashMap::new();
    for e in read_manifest(&manifest_path)? {
        last.insert((e.stage.clone(), e.branch.clone()), e);
    }
    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(|e| io_err(&manifest_path, e))?;
    let mut summary = RunSummary {
        manifest: manifest_path.clone(),
        ..Default::default()
    };

    let mut branches = vec![BranchState {
        name: ROOT_BRANCH.into(),
        ..Default::default()
    }];
    for stage in &config.stages {
        if stage.kind == StageKind::Sample {
            let root = branches.into_iter().next().expect("one branch before sampling");
            branches = Vec::new();
            for &size in &config.sample_sizes {
                for &seed in &config.seeds {
                    branches.push(BranchState {
                        name: branch_name(size, seed),
                        sample: Some((size, seed)),
                        ..root.clone()
                    });
                }
            }
        }
        let results = try_map_ordered(&branches, config.branch_workers, |b| {
            Ok::<_, ()>(run_one(config, stage, b, last.get(&(stage.name.clone(), b.name.clone()))))
        })
        .unwrap_or_else(|_| unreachable!("closure never fails"));

        // Single writer: lines are appended here in branch order.
        let mut failure = None;
        for (b, res) in branches.iter_mut().zip(results) {
            let key = (stage.name.clone(), b.name.clone());
            match res {
                Ok(StepResult::Skipped(entry)) => {
                    log::info!("{} [{}]: up to date", stage.name, b.name);
                    apply_outputs(stage.kind, b, &entry, out);
                    summary.skipped.push(key);
                }
                Ok(StepResult::Ran(entry)) => {
                    append(&mut manifest, &manifest_path, &entry)?;
                    apply_outputs(stage.kind, b, &entry, out);
                    summary.executed.push(key);
                }
                Err(entry) => {
                    append(&mut manifest, &manifest_path, &entry)?;
                    if failure.is_none() {
                        failure = Some(PipelineError::Stage {
                            stage: stage.name.clone(),
                            branch: b.name.clone(),
                            message: entry.error.clone().unwrap_or_default(),
                        });
                    }
                }
            }
        }
        if let Some(f) = failure {
            return Err(f);
        }
    }
    Ok(summary)
}

enum StepResult {
    Skipped(ManifestEntry),
    Ran(ManifestEntry),
}

fn append(f: &mut File, path: &Path, entry: &ManifestEntry) -> Result<()> {
    let mut line = serde_json::to_vec(entry).expect("manifest entries serialize");
    line.push(b'\n');
    f.write_all(&line).and_then(|_| f.flush()).map_err(|e| io_err(path, e))
}

fn apply_outputs(kind: StageKind, b: &mut BranchState, entry: &ManifestEntry, out: &Path) {
    let get = |n: &str| entry.output(n).map(|o| out.join(&o.path));
    match kind {
        StageKind::Translate | StageKind::Filter | StageKind::Sample => b.corpus = get("corpus"),
        StageKind::Train => b.main = get("archive"),
        StageKind::Merge => b.merged = get("archive"),
        StageKind::Eval => {}
    }
}

fn run_one(
    config: &PipelineConfig,
    stage: &StageConfig,
    b: &BranchState,
    previous: Option<&ManifestEntry>,
) -> Result<StepResult, Box<ManifestEntry>> {
    let failed = |fingerprint: String, inputs: Vec<FileDigest>, message: String| Box::new(ManifestEntry {
        stage: stage.name.clone(),
        kind: stage.kind,
        branch: b.name.clone(),
        status: StageStatus::Failed,
        fingerprint,
        inputs,
        outputs: Vec::new(),
        summary: Value::Null,
        error: Some(message),
    });
    let plan = match plan(config, stage, b) {
        Ok(p) => p,
        Err(e) => return Err(failed(String::new(), Vec::new(), e.to_string())),
    };
    if let Some(prev) = previous {
        if prev.status == StageStatus::Completed && prev.fingerprint == plan.fingerprint && outputs_intact(&config.out_dir, prev) {
            return Ok(StepResult::Skipped(prev.clone()));
        }
    }
    let dir = stage_dir(config, stage, b);
    let done = std::fs::create_dir_all(&dir)
        .map_err(|e| e.to_string())
        .and_then(|_| execute(config, stage, b, &dir).map_err(|e| e.to_string()));
    match done {
        Ok(d) => {
            let mut outputs = Vec::new();
            for (name, p) in d.outputs {
                match sha256_file(&p) {
                    Ok(sha256) => outputs.push(FileDigest {
                        name,
                        path: rel(&config.out_dir, &p),
                        sha256,
                    }),
                    Err(e) => return Err(failed(plan.fingerprint, plan.inputs, format!("{}: {e}", p.display()))),
                }
            }
            Ok(StepResult::Ran(ManifestEntry {
                stage: stage.name.clone(),
                kind: stage.kind,
                branch: b.name.clone(),
                status: StageStatus::Completed,
                fingerprint: plan.fingerprint,
                inputs: plan.inputs,
                outputs,
                summary: d.summary,
                error: None,
            }))
        }
        Err(message) => {
            log::error!("{} [{}]: {message}", stage.name, b.name);
            Err(failed(plan.fingerprint, plan.inputs, message))
        }
    }
}

fn outputs_intact(out: &Path, e: &ManifestEntry) -> bool {
    e.outputs
        .iter()
        .all(|o| sha256_file(&out.join(&o.path)).is_ok_and(|d| d == o.sha256))
}

fn stage_dir(config: &PipelineConfig, stage: &StageConfig, b: &BranchState) -> PathBuf {
    if b.name == ROOT_BRANCH {
        config.out_dir.join(&stage.name)
    } else {
        config.out_dir.join(&b.name).join(&stage.name)
    }
}

// Input files this stage reads, with the names they are recorded under.
fn stage_inputs(config: &PipelineConfig, stage: &StageConfig, b: &BranchState) -> Result<Vec<(String, PathBuf)>> {
    let corpus_in = |explicit: &Option<PathBuf>| -> Result<(String, PathBuf)> {
        match explicit {
            Some(p) => Ok(("corpus".into(), config.resolve(p))),
            None => b
                .corpus
                .clone()
                .map(|p| ("corpus".into(), p))
                .ok_or_else(|| PipelineError::Config(format!("stage {:?}: no input corpus", stage.name))),
        }
    };
    let mut v = Vec::new();
    match stage.kind {
        StageKind::Translate => {
            let p: TranslateParams = params(stage)?;
            v.push(("corpus".into(), config.resolve(&p.input)));
        }
        StageKind::Filter => v.push(corpus_in(&params::<FilterParams>(stage)?.input)?),
        StageKind::Sample => v.push(corpus_in(&params::<SampleParams>(stage)?.input)?),
        StageKind::Train => v.push(corpus_in(&None)?),
        StageKind::Merge => {
            let p: MergeParams = params(stage)?;
            let fine = b.main.clone().ok_or_else(|| PipelineError::Config("no trained checkpoint".into()))?;
            v.push(("fine".into(), fine));
            v.push(("base".into(), config.resolve(&p.base)));
        }
        StageKind::Eval => {
            let p: EvalParams = params(stage)?;
            let bench_path = config.resolve(&p.benchmark);
            let bench = BenchmarkConfig::load(&bench_path).map_err(|e| PipelineError::Config(e.to_string()))?;
            v.push(("benchmark".into(), bench_path));
            for t in &bench.tasks {
                for path in t.input_paths() {
                    v.push((format!("task:{}", t.name()), path.to_path_buf()));
                }
            }
            if let Some(ProviderConfig::Precomputed { path }) = config.providers.get(&p.provider) {
                v.push(("vectors".into(), path.clone()));
            }
            for var in &p.variants {
                match var {
                    Variant::Main => v.extend(b.main.clone().map(|p| ("main".into(), p))),
                    Variant::Merged => v.extend(b.merged.clone().map(|p| ("merged".into(), p))),
                    Variant::Base => {}
                }
            }
        }
    }
    if stage.kind == StageKind::Filter {
        let p: FilterParams = params(stage)?;
        if let Some(ProviderConfig::Precomputed { path }) = config.providers.get(&p.provider) {
            v.push(("vectors".into(), path.clone()));
        }
    }
    Ok(v)
}

fn plan(config: &PipelineConfig, stage: &StageConfig, b: &BranchState) -> Result<Planned> {
    let mut inputs = Vec::new();
    for (name, p) in stage_inputs(config, stage, b)? {
        let sha256 = sha256_file(&p).map_err(|e| io_err(&p, format!("input {name}: {e}")))?;
        let path = if p.starts_with(&config.out_dir) {
            rel(&config.out_dir, &p)
        } else {
            p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
        };
        inputs.push(FileDigest { name, path, sha256 });
    }
    let provider = stage
        .params
        .get("provider")
        .and_then(|v| v.as_str())
        .and_then(|n| config.providers.get(n));
    let sample = b.sample.map(|(n, s)| json!({"size": n, "seed": s, "mode": config.sample_mode}));
    let key = json!({
        "stage": stage.name,
        "kind": stage.kind,
        "branch": b.name,
        "params": stage.params,
        "provider": provider,
        "sample": if stage.kind == StageKind::Sample { sample } else { None },
        "inputs": inputs,
    });
    let fingerprint = hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("json")));
    Ok(Planned { fingerprint, inputs })
}

fn build_provider(config: &PipelineConfig, name: &str, model: Option<&str>) -> Result<Box<dyn crate::embedder::EmbeddingProvider>> {
    let mut p = config
        .providers
        .get(name)
        .cloned()
        .ok_or_else(|| PipelineError::Config(format!("unknown provider {name:?}")))?;
    if let Some(model) = model {
        match &mut p {
            ProviderConfig::Http(c) => c.model_id = c.model_id.replace("{model}", model),
            ProviderConfig::Hash { model_id: Some(m), .. } => *m = m.replace("{model}", model),
            _ => {}
        }
    }
    p.build().map_err(|e| PipelineError::Config(format!("provider {name:?}: {e}")))
}

type StageResult<T> = std::result::Result<T, String>;

fn execute(config: &PipelineConfig, stage: &StageConfig, b: &BranchState, dir: &Path) -> StageResult<Done> {
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let inputs = stage_inputs(config, stage, b).map_err(|e| s(&e))?;
    let input = |name: &str| inputs.iter().find(|(n, _)| n == name).map(|(_, p)| p.clone()).expect("planned input");
    match stage.kind {
        StageKind::Translate => {
            let p: TranslateParams = params(stage).map_err(|e| s(&e))?;
            let corpus = load_pairs(input("corpus")).map_err(|e| s(&e))?;
            let backend = p.job.backend();
            let run = run_translation(&corpus, &p.job, &backend, None).map_err(|e| s(&e))?;
            let (t, f) = (dir.join("translated.jsonl"), dir.join("failed.jsonl"));
            write_pairs(&run.translated, &t).map_err(|e| s(&e))?;
            write_pairs(&run.failed, &f).map_err(|e| s(&e))?;
            Ok(Done {
                outputs: vec![("corpus".into(), t), ("failed".into(), f)],
                summary: serde_json::to_value(&run.stats).expect("json"),
            })
        }
        StageKind::Filter => {
            let p: FilterParams = params(stage).map_err(|e| s(&e))?;
            let corpus = load_pairs(input("corpus")).map_err(|e| s(&e))?;
            let provider = build_provider(config, &p.provider, None).map_err(|e| s(&e))?;
            let thresholds = FilterThresholds::new(p.max_drift, p.min_sim).map_err(|e| s(&e))?;
            let opts = FilterOptions {
                group_size: p.group_size,
                ..Default::default()
            };
            let outcome = filter_corpus(&corpus, &provider, &thresholds, opts).map_err(|e| s(&e))?;
            let (k, r) = (dir.join("kept.jsonl"), dir.join("reports.jsonl"));
            write_pairs(&outcome.kept, &k).map_err(|e| s(&e))?;
            write_jsonl(&outcome.reports, &r)?;
            Ok(Done {
                outputs: vec![("corpus".into(), k), ("reports".into(), r)],
                summary: serde_json::to_value(&outcome.stats).expect("json"),
            })
        }
        StageKind::Sample => {
            let (size, seed) = b.sample.expect("sample branches carry a size");
            let corpus = load_pairs(input("corpus")).map_err(|e| s(&e))?;
            let stream = match config.sample_mode {
                SampleMode::Independent => derived_seed(seed, size),
                SampleMode::Nested => seed,
            };
            let picked: Corpus = sample(&corpus, size, stream).map_err(|e| s(&e))?;
            let path = dir.join("sample.jsonl");
            write_pairs(&picked, &path).map_err(|e| s(&e))?;
            Ok(Done {
                outputs: vec![("corpus".into(), path)],
                summary: json!({"size": size, "seed": seed, "stream_seed": stream, "available": corpus.len()}),
            })
        }
        StageKind::Train => {
            let p: TrainParams = params(stage).map_err(|e| s(&e))?;
            let pairs = input("corpus");
            let out = dir.join("model.safetensors");
            let args: Vec<String> = p
                .args
                .iter()
                .map(|a| {
                    a.replace("{pairs}", &pairs.to_string_lossy())
                        .replace("{out}", &out.to_string_lossy())
                        .replace("{branch}", &b.name)
                })
                .collect();
            let log_path = dir.join("train.log");
            let log_file = File::create(&log_path).map_err(|e| s(&e))?;
            let status = Command::new(&p.program)
                .args(&args)
                .stdout(log_file.try_clone().map_err(|e| s(&e))?)
                .stderr(log_file)
                .status()
                .map_err(|e| format!("cannot start {}: {e}", p.program))?;
            if !status.success() {
                return Err(format!("{} exited with {status}; see {}", p.program, log_path.display()));
            }
            let archive = load_archive(&out).map_err(|e| format!("trainer output: {e}"))?;
            Ok(Done {
                outputs: vec![("archive".into(), out)],
                summary: json!({"tensors": archive.len(), "sha256": archive.digest()}),
            })
        }
        StageKind::Merge => {
            let p: MergeParams = params(stage).map_err(|e| s(&e))?;
            let fine = load_archive(input("fine")).map_err(|e| s(&e))?;
            let base = load_archive(input("base")).map_err(|e| s(&e))?;
            let merged = merge_archives(&fine, &base, MergeSpec::new(p.alpha).map_err(|e| s(&e))?).map_err(|e| s(&e))?;
            let out = dir.join("merged.safetensors");
            save_archive(&merged, &out).map_err(|e| s(&e))?;
            Ok(Done {
                outputs: vec![("archive".into(), out)],
                summary: json!({"alpha": p.alpha, "tensors": merged.len()}),
            })
        }
        StageKind::Eval => {
            let p: EvalParams = params(stage).map_err(|e| s(&e))?;
            let bench = BenchmarkConfig::load(input("benchmark")).map_err(|e| s(&e))?;
            let external: Vec<(String, f64)> = p.external.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let mut runs: Vec<(String, Option<String>)> = Vec::new();
            if p.variants.is_empty() {
                runs.push(("default".into(), None));
            }
            for v in &p.variants {
                let model = match v {
                    Variant::Main => b.main.as_ref().map(|p| p.to_string_lossy().into_owned()),
                    Variant::Merged => b.merged.as_ref().map(|p| p.to_string_lossy().into_owned()),
                    Variant::Base => p.base_model.clone(),
                };
                runs.push((v.as_str().into(), Some(model.ok_or_else(|| format!("no checkpoint for {}", v.as_str()))?)));
            }
            let mut outputs = Vec::new();
            let mut averages = serde_json::Map::new();
            for (label, model) in runs {
                let provider = build_provider(config, &p.provider, model.as_deref()).map_err(|e| s(&e))?;
                let result = run_benchmark(&bench, &provider, &external).map_err(|e| s(&e))?;
                let path = dir.join(format!("report_{label}.jsonl"));
                write_report(&result, &path).map_err(|e| s(&e))?;
                averages.insert(label.clone(), json!(result.average));
                outputs.push((format!("report:{label}"), path));
            }
            Ok(Done {
                outputs,
                summary: json!({"average": averages}),
            })
        }
    }
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> StageResult<()> {
    let mut w = std::io::BufWriter::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| e.to_string())?;
        w.write_all(b"\n").map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// Evaluation results of one or more runs as a comparison table.
///
/// Each completed eval output becomes a row labelled
/// `<run>/<branch>/<variant>`, where `<run>` is the manifest's directory
/// name and `root/` is omitted. Later manifest lines win over earlier ones
/// for the same stage and branch.
pub fn report(manifests: &[PathBuf]) -> Result<ComparisonTable> {
    let mut rows: Vec<(String, BenchmarkResult)> = Vec::new();
    for m in manifests {
        let dir = m.parent().map(Path::to_path_buf).unwrap_or_default();
        let run = dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let mut latest: Vec<ManifestEntry> = Vec::new();
        for e in read_manifest(m)? {
            if e.kind != StageKind::Eval {
                continue;
            }
            match latest.iter_mut().find(|x| x.stage == e.stage && x.branch == e.branch) {
                Some(slot) => *slot = e,
                None => latest.push(e),
            }
        }
        for e in latest.into_iter().filter(|e| e.status == StageStatus::Completed) {
            for o in &e.outputs {
                let Some(variant) = o.name.strip_prefix("report:") else { continue };
                let result = read_report(dir.join(&o.path)).map_err(|err| io_err(&dir.join(&o.path), err))?;
                let mut label = run.clone();
                if e.branch != ROOT_BRANCH {
                    label = format!("{label}/{}", e.branch);
                }
                rows.push((format!("{label}/{variant}"), result));
            }
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::Config("no evaluation results in the given manifests".into()));
    }
    Ok(ComparisonTable::build(rows.iter().map(|(l, r)| (l.clone(), r))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_mode_gives_subsets() {
        let small = crate::corpus::sample_indices(100, 10, 7).unwrap();
        let large = crate::corpus::sample_indices(100, 50, 7).unwrap();
        assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn independent_seeds_differ_by_size() {
        assert_ne!(derived_seed(7, 10), derived_seed(7, 50));
        assert_eq!(derived_seed(7, 10), derived_seed(7, 10));
    }

    #[test]
    fn relative_paths_use_forward_slashes() {
        assert_eq!(rel(Path::new("/o"), Path::new("/o/n10_s7/filter/kept.jsonl")), "n10_s7/filter/kept.jsonl");
    }

    fn cfg(stages: &str) -> Result<PipelineConfig> {
        let mut c: PipelineConfig = toml::from_str(stages).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.base_dir = PathBuf::from(".");
        c.validate().map(|_| c)
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dup = "[[stages]]\nname = \"a\"\nkind = \"sample\"\n[[stages]]\nname = \"a\"\nkind = \"sample\"\n";
        assert!(cfg(dup).unwrap_err().to_string().contains("has no input corpus"));
        let no_sizes = "[[stages]]\nname = \"s\"\nkind = \"sample\"\nparams = { input = \"x.jsonl\" }\n";
        assert!(cfg(no_sizes).unwrap_err().to_string().contains("sample_sizes"));
        let unknown = "[providers.h]\nkind = \"hash\"\n[[stages]]\nname = \"f\"\nkind = \"filter\"\nparams = { input = \"x\", provider = \"nope\" }\n";
        assert!(cfg(unknown).unwrap_err().to_string().contains("unknown provider"));
        let typo = "[providers.h]\nkind = \"hash\"\n[[stages]]\nname = \"f\"\nkind = \"filter\"\nparams = { input = \"x\", provider = \"h\", max_drfit = 0.1 }\n";
        assert!(cfg(typo).is_err());
        let dup_names = "[providers.h]\nkind = \"hash\"\n[[stages]]\nname = \"f\"\nkind = \"filter\"\nparams = { input = \"x\", provider = \"h\" }\n[[stages]]\nname = \"f\"\nkind = \"filter\"\nparams = { provider = \"h\" }\n";
        assert!(cfg(dup_names).unwrap_err().to_string().contains("duplicate stage name"));
        let merge_first = "[[stages]]\nname = \"m\"\nkind = \"merge\"\nparams = { base = \"b\" }\n";
        assert!(cfg(merge_first).unwrap_err().to_string().contains("train"));
    }
}
