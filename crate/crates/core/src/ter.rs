//! Translation Edit Rate.
//!
//! TER is the number of word insertions, deletions, substitutions and
//! block shifts needed to turn a hypothesis into its reference, divided by
//! the reference length. Finding the true minimum is NP-hard, so shifts are
//! chosen greedily:
//!
//! 1. Align the current hypothesis with the reference (unit-cost
//!    Levenshtein, canonical backtrace) and mark every hypothesis word not
//!    covered by an exact match as misaligned.
//! 2. A candidate shift moves a contiguous block of `1..=max_shift_size`
//!    hypothesis words to another position at most `max_shift_distance`
//!    words away. The block must equal some contiguous reference segment
//!    and contain at least one misaligned word.
//! 3. Take the candidate that lowers the edit distance the most; ties go to
//!    the leftmost block start, then the shorter block, then the leftmost
//!    destination. Stop when no candidate lowers the distance.
//!
//! Each applied shift costs one edit.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::try_map_ordered;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TerError {
    #[error("empty reference: TER is undefined")]
    EmptyReference,
    #[error("pair {index}: empty reference")]
    EmptyReferenceAt { index: usize },
    #[error("no pairs to score")]
    NoPairs,
    #[error("invalid TER config: {0}")]
    Config(String),
}

pub type Result<T, E = TerError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerConfig {
    pub case_sensitive: bool,
    /// Maximum number of positions a block may move.
    pub max_shift_distance: usize,
    /// Maximum number of words in a shifted block.
    pub max_shift_size: usize,
}

impl Default for TerConfig {
    fn default() -> Self {
        Self {
            case_sensitive: true,
            max_shift_distance: 10,
            max_shift_size: 10,
        }
    }
}

impl TerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_shift_distance == 0 || self.max_shift_size == 0 {
            return Err(TerError::Config("shift limits must be at least 1".into()));
        }
        Ok(())
    }
}

/// Edit counts and the resulting rate for one pair or a whole corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TerScore {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub shifts: usize,
    pub ref_length: usize,
    /// `edits / ref_length`; multiply by 100 for the conventional figure.
    pub score: f64,
}

impl TerScore {
    fn from_counts(
        insertions: usize,
        deletions: usize,
        substitutions: usize,
        shifts: usize,
        ref_length: usize,
    ) -> Self {
        let edits = insertions + deletions + substitutions + shifts;
        Self {
            insertions,
            deletions,
            substitutions,
            shifts,
            ref_length,
            score: if ref_length > 0 {
                edits as f64 / ref_length as f64
            } else {
                0.0
            },
        }
    }

    pub fn edits(&self) -> usize {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.score
    }
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}|[^\s\p{P}]+").expect("static regex"))
}

/// Splits on Unicode whitespace and makes every punctuation character
/// (Armenian `՞ ՜ ՝ ։` included) a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    token_regex()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

// Token sequences are interned to u32 ids before the search.
struct Interner<'a> {
    ids: HashMap<std::borrow::Cow<'a, str>, u32>,
    case_sensitive: bool,
}

impl<'a> Interner<'a> {
    fn new(case_sensitive: bool) -> Self {
        Self {
            ids: HashMap::new(),
            case_sensitive,
        }
    }

    fn intern<S: AsRef<str>>(&mut self, toks: &'a [S]) -> Vec<u32> {
        toks.iter()
            .map(|t| {
                let key = if self.case_sensitive {
                    std::borrow::Cow::Borrowed(t.as_ref())
                } else {
                    std::borrow::Cow::Owned(t.as_ref().to_lowercase())
                };
                let next = self.ids.len() as u32;
                *self.ids.entry(key).or_insert(next)
            })
            .collect()
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Counts from a canonical minimum alignment.
#[derive(Debug, Default, PartialEq, Eq)]
struct Alignment {
    insertions: usize,
    deletions: usize,
    substitutions: usize,
    /// `matched[i]` is true when hypothesis word `i` is an exact match.
    matched: Vec<bool>,
}

impl Alignment {
    fn distance(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

// Full DP table, then backtrace from the end preferring, in order: exact
// match, substitution, deletion of a hypothesis word, insertion of a
// reference word.
fn align(hyp: &[u32], reference: &[u32]) -> Alignment {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for (j, cell) in d[..w].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut a = Alignment {
        matched: vec![false; n],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if hyp[i - 1] == reference[j - 1] && here == diag {
                a.matched[i - 1] = true;
                i -= 1;
                j -= 1;
                continue;
            }
            if hyp[i - 1] != reference[j - 1] && here == diag + 1 {
                a.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            a.deletions += 1;
            i -= 1;
        } else {
            a.insertions += 1;
            j -= 1;
        }
    }
    a
}

/// `seq` with `seq[start..start + len]` removed and reinserted so that it
/// begins at index `dest` of the result.
pub(crate) fn move_block<T: Clone>(seq: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let mut rest: Vec<T> = Vec::with_capacity(seq.len());
    rest.extend_from_slice(&seq[..start]);
    rest.extend_from_slice(&seq[start + len..]);
    let block = &seq[start..start + len];
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[dest..]);
    out
}

struct Shift {
    gain: usize,
    result: Vec<u32>,
}

fn best_shift(
    hyp: &[u32],
    reference: &[u32],
    ref_blocks: &HashSet<&[u32]>,
    current: &Alignment,
    cfg: &TerConfig,
) -> Option<Shift> {
    let n = hyp.len();
    let dist = current.distance();
    let mut best: Option<Shift> = None;
    for start in 0..n {
        for len in 1..=cfg.max_shift_size.min(n - start) {
            let block = &hyp[start..start + len];
            if !current.matched[start..start + len].iter().any(|m| !m) {
                continue;
            }
            if !ref_blocks.contains(block) {
                continue;
            }
            let lo = start.saturating_sub(cfg.max_shift_distance);
            let hi = (start + cfg.max_shift_distance).min(n - len);
            for dest in lo..=hi {
                if dest == start {
                    continue;
                }
                let moved = move_block(hyp, start, len, dest);
                let d = edit_distance(&moved, reference);
                if d < dist {
                    let gain = dist - d;
                    if best.as_ref().is_none_or(|b| gain > b.gain) {
                        best = Some(Shift { gain, result: moved });
                    }
                }
            }
        }
    }
    best
}

fn ter_ids(hyp: &[u32], reference: &[u32], cfg: &TerConfig) -> TerScore {
    let mut ref_blocks: HashSet<&[u32]> = HashSet::new();
    for len in 1..=cfg.max_shift_size.min(reference.len()) {
        ref_blocks.extend(reference.windows(len));
    }
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    let mut alignment = align(&cur, reference);
    while alignment.distance() > 0 {
        match best_shift(&cur, reference, &ref_blocks, &alignment, cfg) {
            Some(s) => {
                cur = s.result;
                shifts += 1;
                alignment = align(&cur, reference);
            }
            None => break,
        }
    }
    TerScore::from_counts(
        alignment.insertions,
        alignment.deletions,
        alignment.substitutions,
        shifts,
        reference.len(),
    )
}

/// TER of one hypothesis against one reference.
pub fn ter_single<S: AsRef<str>>(hyp: &[S], reference: &[S], cfg: &TerConfig) -> Result<TerScore> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(TerError::EmptyReference);
    }
    let mut interner = Interner::new(cfg.case_sensitive);
    let r = interner.intern(reference);
    let h = interner.intern(hyp);
    Ok(ter_ids(&h, &r, cfg))
}

/// Corpus-level TER plus the per-pair scores it aggregates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusTer {
    /// Summed counts; `score` is total edits over total reference words.
    pub total: TerScore,
    pub per_pair: Vec<TerScore>,
}

/// Scores `(hypothesis, reference)` token pairs; the corpus rate is the
/// sum of edits over the sum of reference lengths.
pub fn ter_corpus<S: AsRef<str> + Sync>(pairs: &[(Vec<S>, Vec<S>)], cfg: &TerConfig) -> Result<CorpusTer> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TerError::NoPairs);
    }
    if let Some(index) = pairs.iter().position(|(_, r)| r.is_empty()) {
        return Err(TerError::EmptyReferenceAt { index });
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let per_pair = try_map_ordered(pairs, workers, |(h, r)| ter_single(h, r, cfg))
        .map_err(|(_, e)| e)?;
    let sum = |f: fn(&TerScore) -> usize| per_pair.iter().map(f).sum::<usize>();
    let total = TerScore::from_counts(
        sum(|s| s.insertions),
        sum(|s| s.deletions),
        sum(|s| s.substitutions),
        sum(|s| s.shifts),
        sum(|s| s.ref_length),
    );
    Ok(CorpusTer { total, per_pair })
}
