//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

pub mod mock;

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_tokens(rng: &mut StdRng, min_len: usize, max_len: usize, vocab: &[&'static str]) -> Vec<&'static str> {
    let n = rng.random_range(min_len..=max_len);
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect()
}

// ---- TER ----

fn levenshtein(a: &[&str], b: &[&str]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = *[d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1].iter().min().unwrap();
        }
    }
    d
}

pub fn lev(a: &[&str], b: &[&str]) -> usize {
    levenshtein(a, b)[a.len()][b.len()]
}

/// (insertions, deletions, substitutions, matched hyp positions) from the
/// backtrace that prefers match, substitution, deletion, insertion.
pub fn canonical_alignment(hyp: &[&str], reference: &[&str]) -> (usize, usize, usize, Vec<bool>) {
    let d = levenshtein(hyp, reference);
    let (mut i, mut j) = (hyp.len(), reference.len());
    let (mut ins, mut del, mut sub) = (0, 0, 0);
    let mut matched = vec![false; hyp.len()];
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && hyp[i - 1] == reference[j - 1] && d[i][j] == d[i - 1][j - 1] {
            matched[i - 1] = true;
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && hyp[i - 1] != reference[j - 1] && d[i][j] == d[i - 1][j - 1] + 1 {
            sub += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    (ins, del, sub, matched)
}

fn shifted(seq: &[&'static str], start: usize, len: usize, dest: usize) -> Vec<&'static str> {
    let block: Vec<_> = seq[start..start + len].to_vec();
    let mut rest: Vec<_> = seq.to_vec();
    rest.drain(start..start + len);
    for (k, w) in block.into_iter().enumerate() {
        rest.insert(dest + k, w);
    }
    rest
}

fn occurs_in(block: &[&str], reference: &[&str]) -> bool {
    reference.windows(block.len()).any(|w| w == block)
}

/// Greedy TER written straight from the rule: repeatedly apply the
/// eligible shift with the largest distance reduction (ties: smallest
/// start, then shortest block, then smallest destination).
/// Returns (ins, del, sub, shifts).
pub fn reference_greedy_ter(
    hyp: &[&'static str],
    reference: &[&'static str],
    max_size: usize,
    max_dist: usize,
) -> (usize, usize, usize, usize) {
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    loop {
        let (ins, del, sub, matched) = canonical_alignment(&cur, reference);
        let dist = ins + del + sub;
        if dist == 0 {
            return (ins, del, sub, shifts);
        }
        let mut best: Option<(usize, Vec<&'static str>)> = None;
        let n = cur.len();
        for start in 0..n {
            for len in 1..=max_size {
                if start + len > n {
                    break;
                }
                if matched[start..start + len].iter().all(|&m| m) {
                    continue;
                }
                if !occurs_in(&cur[start..start + len], reference) {
                    continue;
                }
                for dest in 0..=(n - len) {
                    if dest == start || dest.abs_diff(start) > max_dist {
                        continue;
                    }
                    let cand = shifted(&cur, start, len, dest);
                    let d = lev(&cand, reference);
                    if d < dist {
                        let gain = dist - d;
                        if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                            best = Some((gain, cand));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, next)) => {
                cur = next;
                shifts += 1;
            }
            None => return (ins, del, sub, shifts),
        }
    }
}

/// Minimum over all shift sequences (any block, any destination) of
/// `shifts + edit distance`, by breadth-first search over orderings.
pub fn exhaustive_min_edits(hyp: &[&'static str], reference: &[&'static str]) -> usize {
    let mut best = lev(hyp, reference);
    let mut seen: HashSet<Vec<&'static str>> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(hyp.to_vec());
    queue.push_back((hyp.to_vec(), 0usize));
    while let Some((seq, k)) = queue.pop_front() {
        best = best.min(k + lev(&seq, reference));
        if k + 1 >= best {
            continue;
        }
        let n = seq.len();
        for start in 0..n {
            for len in 1..=(n - start) {
                for dest in 0..=(n - len) {
                    if dest == start {
                        continue;
                    }
                    let next = shifted(&seq, start, len, dest);
                    if seen.insert(next.clone()) {
                        queue.push_back((next, k + 1));
                    }
                }
            }
        }
    }
    best
}

// ---- retrieval ----

pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Hit rate (0–100) by fully sorting every query's document list.
pub fn brute_force_hit_rate(
    queries: &[Vec<f32>],
    documents: &[Vec<f32>],
    doc_ids: &[String],
    relevant: &[BTreeSet<String>],
    k: usize,
) -> f64 {
    let mut hits = 0;
    for (q, rel) in queries.iter().zip(relevant) {
        let mut ranked: Vec<(f64, &String)> = documents.iter().zip(doc_ids).map(|(d, id)| (naive_cosine(q, d), id)).collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
        if ranked.iter().take(k).any(|(_, id)| rel.contains(*id)) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / queries.len() as f64
}

// ---- Spearman ----

/// Rank by counting: 1 + number smaller + half the other ties.
pub fn naive_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

/// A sequence of small integers with at least two distinct values.
pub fn tied_sequence(rng: &mut StdRng, n: usize) -> Vec<f64> {
    loop {
        let levels = rng.random_range(2..=n.max(3));
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        if v.iter().any(|&x| x != v[0]) {
            return v;
        }
    }
}

pub fn unit_random(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}
