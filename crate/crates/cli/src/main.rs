use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lrladapt::corpus::{self, load_pairs, write_pairs};
use lrladapt::datagen::{run_translation, Journal, TranslationJobConfig};
use lrladapt::driftfilter::{filter_corpus, FilterOptions, DEFAULT_MAX_SEMANTIC_DRIFT, DEFAULT_MIN_TRANSLATION_SIM};
use lrladapt::embedder::ProviderConfig;
use lrladapt::evalbench::{run_benchmark, write_report, BenchmarkConfig};
use lrladapt::merge::{load_archive, merge_archives, save_archive, MergeSpec};
use lrladapt::pipeline::{self, PipelineConfig};
use lrladapt::ter::{ter_corpus, tokenize, TerConfig};
use lrladapt::Thresholds;

#[derive(Parser)]
#[command(name = "lrladapt", version, about = "Adapt multilingual embedding models to a low-resource language")]
struct Cli {
    /// Config file for commands that take one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override for `pipeline run`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Random seed (sampling); overrides the seed list of `pipeline run`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair file utilities.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// LLM translation of pair files.
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// Drift filtering of translated pairs.
    #[command(subcommand)]
    Filter(FilterCmd),
    /// Translation edit rate over line-aligned files.
    Ter(TerArgs),
    /// Weighted average of two checkpoints.
    Merge(MergeArgs),
    /// Benchmark evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Config-driven runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Draw a seeded uniform subsample.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Check the file and report counts and duplicate content.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatagenCmd {
    Translate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        failed: PathBuf,
        /// Completed-id checkpoint; defaults to `<out>.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Keep finished records from the checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Subcommand)]
enum FilterCmd {
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_kept: PathBuf,
        #[arg(long)]
        out_reports: PathBuf,
        /// Embedding provider config file.
        #[arg(long)]
        provider: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_SEMANTIC_DRIFT)]
        max_drift: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_TRANSLATION_SIM)]
        min_sim: f64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Args)]
struct TerArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    case_insensitive: bool,
    #[arg(long, default_value_t = 10)]
    max_shift_distance: usize,
    #[arg(long, default_value_t = 10)]
    max_shift_size: usize,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    fine: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    Run {
        #[arg(long)]
        provider: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Externally computed task score, e.g. `MTEB=61.2`.
        #[arg(long = "external-score", value_parser = parse_external)]
        external: Vec<(String, f64)>,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run,
    /// Comparison table of the evaluations recorded in run manifests.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_external(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v: f64 = value.trim().parse().map_err(|e| format!("{value:?}: {e}"))?;
    if name.trim().is_empty() || !v.is_finite() {
        return Err("expected NAME=VALUE with a finite value".into());
    }
    Ok((name.trim().to_string(), v))
}

/// A failure tagged with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

trait Tag<T> {
    /// Bad configuration or arguments: exit 2.
    fn config(self) -> Result<T, Failure>;
    /// The work itself failed: exit 1.
    fn stage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, err: e.into() })
    }

    fn stage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, err: e.into() })
    }
}

fn need_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config.as_deref().ok_or_else(|| Failure {
        code: 2,
        err: anyhow!("--config is required for this command"),
    })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("json"));
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Corpus(CorpusCmd::Sample { input, out, n }) => {
            let seed = cli.seed.unwrap_or(0);
            let c = load_pairs(input).stage()?;
            let s = corpus::sample(&c, *n, seed).config()?;
            write_pairs(&s, out).stage()?;
            print_json(&json!({"records": s.len(), "available": c.len(), "seed": seed}));
        }
        Command::Corpus(CorpusCmd::Validate { input }) => {
            let c = load_pairs(input).stage()?;
            print_json(&serde_json::to_value(corpus::validate(&c)).expect("json"));
        }
        Command::Datagen(DatagenCmd::Translate {
            input,
            out,
            failed,
            checkpoint,
            resume,
        }) => {
            let cfg = TranslationJobConfig::load(need_config(cli)?).config()?;
            let c = load_pairs(input).stage()?;
            let ck = checkpoint.clone().unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".checkpoint");
                p.into()
            });
            let backend = cfg.backend();
            // A fresh start truncates the checkpoint, so probe first.
            if !*resume {
                backend.probe().map_err(|m| anyhow!("translation endpoint unreachable: {m}")).stage()?;
            }
            let mut journal = Journal::open(&ck, *resume).stage()?;
            let run = run_translation(&c, &cfg, &backend, Some(&mut journal)).stage()?;
            write_pairs(&run.translated, out).stage()?;
            write_pairs(&run.failed, failed).stage()?;
            print_json(&serde_json::to_value(&run.stats).expect("json"));
        }
        Command::Filter(FilterCmd::Run {
            input,
            out_kept,
            out_reports,
            provider,
            max_drift,
            min_sim,
            workers,
        }) => {
            let thresholds = Thresholds::new(*max_drift, *min_sim).config()?;
            let provider = ProviderConfig::load(provider).and_then(|p| p.build()).config()?;
            let c = load_pairs(input).stage()?;
            let opts = FilterOptions {
                workers: *workers,
                ..Default::default()
            };
            let outcome = filter_corpus(&c, &provider, &thresholds, opts).stage()?;
            write_pairs(&outcome.kept, out_kept).stage()?;
            write_lines(out_reports, outcome.reports.iter().map(|r| serde_json::to_string(r).expect("json"))).stage()?;
            print_json(&serde_json::to_value(&outcome.stats).expect("json"));
        }
        Command::Ter(a) => {
            let cfg = TerConfig {
                case_sensitive: !a.case_insensitive,
                max_shift_distance: a.max_shift_distance,
                max_shift_size: a.max_shift_size,
            };
            let hyp = read_lines(&a.hyp).stage()?;
            let refs = read_lines(&a.reference).stage()?;
            if hyp.len() != refs.len() {
                return Err(anyhow!("{} has {} lines but {} has {}", a.hyp.display(), hyp.len(), a.reference.display(), refs.len())).config();
            }
            let pairs: Vec<(Vec<String>, Vec<String>)> = hyp.iter().zip(&refs).map(|(h, r)| (tokenize(h), tokenize(r))).collect();
            let scores = ter_corpus(&pairs, &cfg).stage()?;
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for (i, s) in scores.per_pair.iter().enumerate() {
                let mut v = serde_json::to_value(s).expect("json");
                v["line"] = json!(i + 1);
                writeln!(w, "{v}").context("writing output").stage()?;
            }
            let mut total = serde_json::to_value(scores.total).expect("json");
            total["line"] = json!("corpus");
            writeln!(w, "{total}").context("writing output").stage()?;
        }
        Command::Merge(a) => {
            let spec = MergeSpec::new(a.alpha).config()?;
            let fine = load_archive(&a.fine).stage()?;
            let base = load_archive(&a.base).stage()?;
            let merged = match merge_archives(&fine, &base, spec) {
                Ok(m) => m,
                Err(e) if e.is_structural() => return Err(e).config(),
                Err(e) => return Err(e).stage(),
            };
            save_archive(&merged, &a.out).stage()?;
            print_json(&json!({"tensors": merged.len(), "alpha": a.alpha, "sha256": merged.digest()}));
        }
        Command::Eval(EvalCmd::Run { provider, out, external }) => {
            let bench = BenchmarkConfig::load(need_config(cli)?).config()?;
            let provider = ProviderConfig::load(provider).and_then(|p| p.build()).config()?;
            let result = run_benchmark(&bench, &provider, external).stage()?;
            write_report(&result, out).stage()?;
            for l in result.report_lines() {
                print_json(&serde_json::to_value(l).expect("json"));
            }
            if result.is_partial() {
                return Err(anyhow!("{} task(s) failed", result.failures.len())).stage();
            }
        }
        Command::Pipeline(PipelineCmd::Run) => {
            let mut cfg = PipelineConfig::load(need_config(cli)?).config()?;
            if let Some(d) = &cli.out_dir {
                cfg.out_dir = d.clone();
            }
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let summary = pipeline::run_pipeline(&cfg).map_err(|e| {
                let code = if e.is_config() { 2 } else { 1 };
                Failure { code, err: e.into() }
            })?;
            print_json(&json!({
                "manifest": summary.manifest,
                "executed": summary.executed.len(),
                "skipped": summary.skipped.len(),
            }));
        }
        Command::Pipeline(PipelineCmd::Report { manifests, out }) => {
            let table = pipeline::report(manifests).map_err(|e| {
                let code = if e.is_config() { 2 } else { 1 };
                Failure { code, err: e.into() }
            })?;
            let text = table.render();
            print!("{text}");
            if let Some(p) = out {
                std::fs::write(p, &text).with_context(|| p.display().to_string()).stage()?;
            }
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let f = File::open(path).with_context(|| path.display().to_string())?;
    BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .with_context(|| path.display().to_string())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
