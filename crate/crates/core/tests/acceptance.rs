//! Acceptance gates. Each test prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` gives a
//! readable summary.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use lrladapt::corpus::{load_pairs, write_pairs, PairRecord};
use lrladapt::driftfilter::{decide, Decision, DriftMetrics, DriftReason, FilterThresholds};
use lrladapt::embedder::{EmbeddingVector, Role};
use lrladapt::evalbench::{hit_rates_from_vectors, spearman, BenchmarkResult, ComparisonTable};
use lrladapt::merge::{load_archive, merge_archives, save_archive, Dtype, MergeSpec, Tensor, TensorArchive};
use lrladapt::pipeline::{run_pipeline, PipelineConfig, MANIFEST_FILE};
use lrladapt::ter::{ter_single, TerConfig};

use support::*;

const SPEARMAN_TOL: f64 = 1e-12;

fn verdict_line(name: &str, ok: bool, detail: &str, elapsed: Duration, budget: Duration) -> bool {
    let ok = ok && elapsed <= budget;
    println!(
        "{} {name}: {detail} ({:.2}s, budget {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn m(src: f64, tgt: f64, q: f64, p: f64) -> DriftMetrics {
    DriftMetrics::new(src, tgt, q, p)
}

#[test]
fn drift_truth_table() {
    use DriftReason::*;
    let t0 = Instant::now();
    let t = FilterThresholds::default();
    let cases: [(DriftMetrics, &[DriftReason]); 12] = [
        (m(0.90, 0.90, 0.95, 0.95), &[]),
        // |0.80 - 0.75| is 0.05 in decimal; kept.
        (m(0.80, 0.75, 0.90, 0.90), &[]),
        (m(0.75, 0.80, 0.90, 0.90), &[]),
        (m(0.80, 0.7499, 0.90, 0.90), &[SemanticDrift]),
        (m(0.70, 0.80, 0.90, 0.90), &[SemanticDrift]),
        (m(0.90, 0.90, 0.85, 0.95), &[QueryDrift]),
        (m(0.90, 0.90, 0.8501, 0.95), &[]),
        (m(0.90, 0.90, 0.95, 0.85), &[PassageDrift]),
        (m(0.90, 0.90, 0.84, 0.86), &[QueryDrift]),
        (m(0.90, 0.90, 0.85, 0.85), &[QueryDrift, PassageDrift]),
        (m(0.90, 0.50, 0.10, 0.20), &[SemanticDrift, QueryDrift, PassageDrift]),
        (m(-0.20, -0.20, 0.99, 0.99), &[]),
    ];
    let mut wrong = Vec::new();
    for (i, (metrics, want)) in cases.iter().enumerate() {
        let v = decide(metrics, &t);
        let want_set: BTreeSet<DriftReason> = want.iter().copied().collect();
        let want_decision = if want.is_empty() { Decision::Keep } else { Decision::Discard };
        if v.reasons != want_set || v.decision != want_decision {
            wrong.push(i);
        }
    }
    let ok = verdict_line(
        "drift filter truth table",
        wrong.is_empty(),
        &format!("{}/12 fixtures match, mismatches {wrong:?}", 12 - wrong.len()),
        t0.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn filter_partition_and_monotonicity() {
    let t0 = Instant::now();
    let mut rng = rng(11);
    // Values on a 0.01 grid hit the thresholds exactly now and then.
    let draw = |rng: &mut rand::rngs::StdRng| {
        if rng.random_bool(0.3) {
            rng.random_range(80..=100) as f64 / 100.0
        } else {
            rng.random_range(0.78..1.0)
        }
    };
    let fixtures: Vec<DriftMetrics> = (0..10_000)
        .map(|_| {
            let (a, b, c, d) = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
            m(a, b, c, d)
        })
        .collect();
    let kept_under = |t: &FilterThresholds| -> BTreeSet<usize> {
        fixtures
            .iter()
            .enumerate()
            .filter(|(_, f)| decide(*f, t).decision == Decision::Keep)
            .map(|(i, _)| i)
            .collect()
    };

    let base = FilterThresholds::default();
    let kept = kept_under(&base);
    let discarded: BTreeSet<usize> = fixtures
        .iter()
        .enumerate()
        .filter(|(_, f)| decide(*f, &base).decision == Decision::Discard)
        .map(|(i, _)| i)
        .collect();
    let all: BTreeSet<usize> = (0..fixtures.len()).collect();
    let partition = kept.is_disjoint(&discarded) && kept.union(&discarded).copied().collect::<BTreeSet<_>>() == all;

    let mut monotone = true;
    let mut checks = 0;
    for _ in 0..50 {
        let drift = rng.random_range(0..=20) as f64 / 100.0;
        let sim = rng.random_range(60..=99) as f64 / 100.0;
        let loose = FilterThresholds::new(drift, sim).unwrap();
        let tighter_drift = FilterThresholds::new(drift * rng.random_range(0.0..=1.0), sim).unwrap();
        let tighter_sim = FilterThresholds::new(drift, sim + (1.0 - sim) * rng.random_range(0.0..1.0)).unwrap();
        let k = kept_under(&loose);
        for t in [tighter_drift, tighter_sim] {
            checks += 1;
            monotone &= kept_under(&t).is_subset(&k);
        }
    }
    let ok = verdict_line(
        "filter partition and monotonicity",
        partition && monotone,
        &format!(
            "10000 fixtures, kept {} + discarded {}, partition {partition}, {checks} tightenings monotone {monotone}",
            kept.len(),
            discarded.len()
        ),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

#[test]
fn ter_matches_oracles() {
    let t0 = Instant::now();
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let cfg = TerConfig::default();
    let mut rng = rng(2024);
    let (mut greedy_mismatch, mut below_min) = (0, 0);
    for _ in 0..200 {
        let hyp = random_tokens(&mut rng, 0, 8, &vocab);
        let reference = random_tokens(&mut rng, 1, 8, &vocab);
        let got = ter_single(&hyp, &reference, &cfg).unwrap();
        let (ins, del, sub, shifts) = reference_greedy_ter(&hyp, &reference, cfg.max_shift_size, cfg.max_shift_distance);
        if (got.insertions, got.deletions, got.substitutions, got.shifts) != (ins, del, sub, shifts) {
            greedy_mismatch += 1;
        }
        if got.edits() < exhaustive_min_edits(&hyp, &reference) {
            below_min += 1;
        }
    }
    let mut identity_fail = 0;
    for _ in 0..100 {
        let x = random_tokens(&mut rng, 1, 12, &vocab);
        if ter_single(&x, &x, &cfg).unwrap().score != 0.0 {
            identity_fail += 1;
        }
    }
    let rot = ter_single(&["a", "b", "c", "d"], &["b", "c", "d", "a"], &cfg).unwrap();
    let rotation_ok = rot.shifts == 1 && rot.edits() == 1 && rot.score == 0.25;
    let ok = verdict_line(
        "TER oracle",
        greedy_mismatch == 0 && below_min == 0 && identity_fail == 0 && rotation_ok,
        &format!(
            "200 random: {greedy_mismatch} differ from reference greedy, {below_min} below exhaustive minimum; \
             identity failures {identity_fail}/100; rotation shifts={} score={}",
            rot.shifts, rot.score
        ),
        t0.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

#[test]
fn retrieval_matches_full_sort() {
    let t0 = Instant::now();
    let mut rng = rng(99);
    let dim = 16;
    let queries: Vec<Vec<f32>> = (0..50).map(|_| unit_random(&mut rng, dim)).collect();
    let mut documents: Vec<Vec<f32>> = (0..200).map(|_| unit_random(&mut rng, dim)).collect();
    let doc_ids: Vec<String> = (0..200).map(|i| format!("d{i:03}")).collect();
    let relevant: Vec<BTreeSet<String>> = (0..50)
        .map(|_| {
            let n = rng.random_range(1..=3);
            (0..n).map(|_| doc_ids[rng.random_range(0..200)].clone()).collect()
        })
        .collect();
    // Pull one relevant document towards its query for most queries so
    // every cutoff sees a spread of hits and misses.
    for (q, rel) in queries.iter().zip(&relevant).take(40) {
        let idx: usize = rel.iter().next().unwrap()[1..].parse().unwrap();
        let noise = rng.random_range(0.2f32..1.5);
        documents[idx] = q.iter().map(|x| x + noise * rng.random_range(-1.0f32..1.0)).collect();
    }

    let qv: Vec<EmbeddingVector> = queries.iter().map(|v| EmbeddingVector::new(v.clone(), Role::Query).unwrap()).collect();
    let dv: Vec<EmbeddingVector> = documents.iter().map(|v| EmbeddingVector::new(v.clone(), Role::Passage).unwrap()).collect();
    let id_refs: Vec<&str> = doc_ids.iter().map(String::as_str).collect();
    let rel_refs: Vec<&BTreeSet<String>> = relevant.iter().collect();
    let ks = [1, 10, 20];
    let got = hit_rates_from_vectors(&qv, &dv, &id_refs, &rel_refs, &ks).unwrap();
    let want: Vec<f64> = ks
        .iter()
        .map(|&k| brute_force_hit_rate(&queries, &documents, &doc_ids, &relevant, k))
        .collect();
    let monotone = got.windows(2).all(|w| w[0] <= w[1]);
    let ok = verdict_line(
        "retrieval oracle",
        got == want && monotone,
        &format!("hit@1/10/20 = {got:?}, oracle {want:?}, monotone {monotone}"),
        t0.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

#[test]
fn spearman_matches_naive() {
    let t0 = Instant::now();
    let mut rng = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..=50);
        let x = tied_sequence(&mut rng, n);
        let y = tied_sequence(&mut rng, n);
        let got = spearman(&x, &y).unwrap();
        worst = worst.max((got - naive_spearman(&x, &y)).abs());
    }
    let up: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
    let lin: Vec<f64> = (0..20).map(|i| 3.0 * i as f64 - 7.0).collect();
    let down: Vec<f64> = lin.iter().rev().copied().collect();
    let plus = spearman(&up, &lin).unwrap();
    let minus = spearman(&up, &down).unwrap();
    let ok = verdict_line(
        "Spearman oracle",
        worst <= SPEARMAN_TOL && plus == 1.0 && minus == -1.0,
        &format!("max |diff| over 1000 = {worst:e} (tol {SPEARMAN_TOL:e}); monotone {plus}, inverse {minus}"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

#[test]
fn published_row_averages() {
    let t0 = Instant::now();
    let tasks = ["Retrieval", "STS [hye]", "MS MARCO [hye]", "MTEB [hye]"];
    let rows: [(&str, [f64; 4], &str); 5] = [
        ("multilingual-e5-base", [58.15, 66.19, 60.73, 72.14], "64.30"),
        ("multilingual-e5-large", [71.20, 69.74, 73.06, 74.44], "72.11"),
        ("multilingual-e5-large-it", [73.37, 69.94, 74.78, 73.86], "72.99"),
        ("Qwen3 Embeddings 0.6B", [37.50, 57.15, 39.35, 55.50], "47.38"),
        ("EmbeddingGemma 300m", [50.00, 59.68, 46.55, 53.47], "52.43"),
    ];
    let results: Vec<(String, BenchmarkResult)> = rows
        .iter()
        .map(|(label, s, _)| (label.to_string(), BenchmarkResult::from_scores(tasks.iter().copied().zip(s.iter().copied()))))
        .collect();
    let table = ComparisonTable::build(results.iter().map(|(l, r)| (l.clone(), r)));
    let rendered = table.render();
    let got: Vec<String> = rendered
        .lines()
        .skip(2)
        .map(|l| l.trim_end_matches(" |").rsplit(" | ").next().unwrap().to_string())
        .collect();
    let want: Vec<String> = rows.iter().map(|r| r.2.to_string()).collect();
    let ok = verdict_line(
        "benchmark averaging fixture",
        got == want,
        &format!("averages {got:?}"),
        t0.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok, "{rendered}");
}

fn random_archive(rng: &mut rand::rngs::StdRng, layout: &[(String, Dtype, Vec<usize>)]) -> TensorArchive {
    let mut a = TensorArchive::new();
    for (name, dtype, shape) in layout {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        a.insert(name.clone(), Tensor::from_f64(*dtype, shape.clone(), &vals).unwrap());
    }
    a.metadata.insert("format".into(), "pt".into());
    a
}

#[test]
fn merge_algebra() {
    let t0 = Instant::now();
    let mut rng = rng(77);
    let dir = tempfile::tempdir().unwrap();
    let dtypes = [Dtype::F32, Dtype::F16, Dtype::BF16, Dtype::F64];
    let mut failures = Vec::new();
    for round in 0..20 {
        let layout: Vec<(String, Dtype, Vec<usize>)> = (0..rng.random_range(1..5))
            .map(|i| {
                let shape = vec![rng.random_range(1..8), rng.random_range(1..8)];
                (format!("layer{i}.weight"), dtypes[rng.random_range(0..dtypes.len())], shape)
            })
            .collect();
        let a = random_archive(&mut rng, &layout);
        let b = random_archive(&mut rng, &layout);
        let alpha = rng.random_range(0.0..1.0);

        if merge_archives(&a, &b, MergeSpec::new(1.0).unwrap()).unwrap().tensors != a.tensors {
            failures.push(format!("round {round}: alpha=1"));
        }
        if merge_archives(&a, &b, MergeSpec::new(0.0).unwrap()).unwrap().tensors != b.tensors {
            failures.push(format!("round {round}: alpha=0"));
        }
        if merge_archives(&a, &a, MergeSpec::new(alpha).unwrap()).unwrap().tensors != a.tensors {
            failures.push(format!("round {round}: self merge"));
        }
        let ab = merge_archives(&a, &b, MergeSpec::EQUAL).unwrap();
        let ba = merge_archives(&b, &a, MergeSpec::EQUAL).unwrap();
        if ab.tensors != ba.tensors {
            failures.push(format!("round {round}: not symmetric"));
        }
        let p = dir.path().join(format!("m{round}.safetensors"));
        save_archive(&ab, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let back = load_archive(&p).unwrap();
        let p2 = dir.path().join(format!("m{round}b.safetensors"));
        save_archive(&back, &p2).unwrap();
        if back != ab || std::fs::read(&p2).unwrap() != bytes {
            failures.push(format!("round {round}: round trip"));
        }
    }
    let ok = verdict_line(
        "merge algebra",
        failures.is_empty(),
        &format!("20 random archive pairs, failures {failures:?}"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

const TOPICS: [&str; 10] = [
    "cooking rice", "learning guitar", "fixing a bike", "saving money", "training a puppy",
    "growing tomatoes", "running a marathon", "painting walls", "writing a resume", "baking bread",
];

fn write_fixtures(dir: &Path) {
    let records: Vec<PairRecord> = (0..200)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            PairRecord::new(
                format!("r{i:03}"),
                "en",
                "",
                format!("Question {i} about {topic}"),
                format!("I have been {topic} for {} weeks and thread {i} asks what to try next.", i % 7 + 1),
            )
        })
        .collect();
    write_pairs(&lrladapt::Corpus::new(records, "fixture").unwrap(), dir.join("corpus.jsonl")).unwrap();

    let mut q = String::new();
    let mut d = String::new();
    let mut rels = String::from("query_id\tdoc_id\n");
    for (i, t) in TOPICS.iter().enumerate() {
        q += &format!("{{\"id\":\"q{i}\",\"text\":\"how do I get better at {t}\"}}\n");
        d += &format!("{{\"id\":\"d{i}\",\"text\":\"a guide to {t} for beginners\"}}\n");
        rels += &format!("q{i}\td{i}\n");
    }
    std::fs::write(dir.join("queries.jsonl"), q).unwrap();
    std::fs::write(dir.join("docs.jsonl"), d).unwrap();
    std::fs::write(dir.join("qrels.tsv"), rels).unwrap();
    let sts: String = (0..12)
        .map(|i| {
            let (a, b) = (TOPICS[i % 10], TOPICS[(i * 3 + 1) % 10]);
            format!("{{\"id\":\"s{i}\",\"text_a\":\"{a}\",\"text_b\":\"{b}\",\"score\":{}}}\n", (i % 6) as f64 * 0.8)
        })
        .collect();
    std::fs::write(dir.join("sts.jsonl"), sts).unwrap();
    std::fs::write(
        dir.join("bench.toml"),
        "[[tasks]]\nkind = \"retrieval\"\nname = \"Retrieval\"\nqueries = \"queries.jsonl\"\ndocuments = \"docs.jsonl\"\nqrels = \"qrels.tsv\"\nk = 3\n\n\
         [[tasks]]\nkind = \"sts\"\nname = \"STS\"\npairs = \"sts.jsonl\"\n",
    )
    .unwrap();
}

fn dry_run_config(dir: &Path, out: &str) -> std::path::PathBuf {
    let text = format!(
        r#"out_dir = "{out}"
sample_sizes = [10]
seeds = [7]

[providers.hash]
kind = "hash"
dim = 64

[[stages]]
name = "translate"
kind = "translate"
[stages.params]
input = "corpus.jsonl"
job = {{ model_name = "stub", target_language = "Armenian", target_lang_code = "hy", max_retries = 1, stub = {{ corrupt_every = 5, malformed_every = 20 }} }}

[[stages]]
name = "filter"
kind = "filter"
params = {{ provider = "hash" }}

[[stages]]
name = "sample"
kind = "sample"

[[stages]]
name = "eval"
kind = "eval"
params = {{ benchmark = "bench.toml", provider = "hash" }}
"#
    );
    let p = dir.join(format!("{out}.toml"));
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn end_to_end_dry_run() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let first = PipelineConfig::load(dry_run_config(dir.path(), "run_a")).unwrap();
    let second = PipelineConfig::load(dry_run_config(dir.path(), "run_b")).unwrap();
    let s1 = run_pipeline(&first).unwrap();
    let s2 = run_pipeline(&second).unwrap();
    let m1 = std::fs::read(first.out_dir.join(MANIFEST_FILE)).unwrap();
    let m2 = std::fs::read(second.out_dir.join(MANIFEST_FILE)).unwrap();

    let rerun = run_pipeline(&first).unwrap();
    let m1_after = std::fs::read(first.out_dir.join(MANIFEST_FILE)).unwrap();

    let sample = load_pairs(first.out_dir.join("n10_s7/sample/sample.jsonl")).unwrap();
    let kept = load_pairs(first.out_dir.join("filter/kept.jsonl")).unwrap();
    let translated = load_pairs(first.out_dir.join("translate/translated.jsonl")).unwrap();
    let failed = load_pairs(first.out_dir.join("translate/failed.jsonl")).unwrap();
    let report = lrladapt::evalbench::read_report(first.out_dir.join("n10_s7/eval/report_default.jsonl")).unwrap();

    let stages_ok = s1.executed.len() == 4 && s2.executed.len() == 4;
    let counts: BTreeMap<&str, usize> = [
        ("translated", translated.len()),
        ("failed", failed.len()),
        ("kept", kept.len()),
        ("sample", sample.len()),
    ]
    .into();
    let flow_ok = translated.len() + failed.len() == 200 && kept.len() < translated.len() && sample.len() == 10 && report.average.is_some();
    let ok = verdict_line(
        "end-to-end dry run",
        stages_ok && flow_ok && m1 == m2 && rerun.executed.is_empty() && m1_after == m1,
        &format!(
            "counts {counts:?}, manifests identical {}, rerun executed {} stages, manifest unchanged {}",
            m1 == m2,
            rerun.executed.len(),
            m1_after == m1
        ),
        t0.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok, "{}", String::from_utf8_lossy(&m1));
}
