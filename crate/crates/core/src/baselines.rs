//! Reply-set selectors that do not search over tuples.
//!
//! All selectors return shortlist row indices in selection order.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::encoder::hash64;
use crate::error::{Error, Result};
use crate::simulation::SimilarityMatrix;
use crate::textmetrics::{Bag, Tokens};

pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;
pub const TOPIC_BUCKETS: u64 = 16;

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::KExceedsShortlist { k, n });
    }
    Ok(())
}

/// The first `k` shortlist rows.
pub fn topk_select(n: usize, k: usize) -> Result<Vec<usize>> {
    check_k(k, n)?;
    Ok((0..k).collect())
}

/// Greedy maximal marginal relevance.
///
/// The top-scoring entry is taken first; each later pick maximizes
/// `λ·rel(i) − (1−λ)·max_{s ∈ selected} f1(i, s)`, where `rel` is the
/// retrieval score min-max normalized over the shortlist. Ties go to the
/// lower row.
pub fn mmr_select(scores: &[f64], bags: &[&Bag], k: usize, lambda: f64) -> Result<Vec<usize>> {
    let n = scores.len();
    check_k(k, n)?;
    if bags.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bags.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("mmr lambda {lambda} outside [0, 1]")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = scores
        .iter()
        .map(|&s| if hi > lo { (s - lo) / (hi - lo) } else { 1.0 })
        .collect();

    let first = (0..n).fold(0, |b, i| if rel[i] > rel[b] { i } else { b });
    let mut selected = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    // running max similarity of each row to the selected set
    let mut redundancy: Vec<f64> = (0..n).map(|i| bags[i].f1(bags[first])).collect();

    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let v = lambda * rel[i] - (1.0 - lambda) * redundancy[i];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (pick, _) = best.expect("k <= n");
        taken[pick] = true;
        selected.push(pick);
        for i in 0..n {
            redundancy[i] = redundancy[i].max(bags[i].f1(bags[pick]));
        }
    }
    Ok(selected)
}

/// Deterministic text-to-topic mapping.
pub trait TopicLabeler {
    fn label(&self, tokens: &Tokens) -> String;
}

/// Stand-in labeler: hashes the most frequent content token into one of
/// [`TOPIC_BUCKETS`] labels. It is not a trained topic classifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashTopicLabeler;

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "am", "an", "and", "are", "as", "at", "be", "but", "by", "can", "do", "for", "from", "have",
    "he", "her", "him", "his", "how", "i", "if", "in", "is", "it", "its", "just", "m", "me", "my", "no", "not", "of",
    "on", "or", "our", "s", "she", "so", "t", "that", "the", "them", "then", "there", "they", "this", "to", "too",
    "us", "was", "we", "what", "when", "who", "will", "with", "would", "yes", "you", "your",
];

impl TopicLabeler for HashTopicLabeler {
    fn label(&self, tokens: &Tokens) -> String {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for (pos, t) in tokens.iter().enumerate() {
            if STOPWORDS.contains(&t.as_str()) {
                continue;
            }
            counts.entry(t.as_str()).or_insert((0, pos)).0 += 1;
        }
        // most frequent, earliest first occurrence on ties
        let top = counts
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)));
        match top {
            Some((tok, _)) => format!("topic-{:02}", hash64(tok.as_bytes(), 0) % TOPIC_BUCKETS),
            None => "topic-none".to_string(),
        }
    }
}

/// Scan in score order taking only unseen topic labels; if fewer than `k`
/// labels exist, backfill with the highest-scoring skipped rows. The
/// result is ordered by shortlist row.
pub fn topic_select(labels: &[String], k: usize) -> Result<Vec<usize>> {
    let n = labels.len();
    check_k(k, n)?;
    let mut used = HashSet::new();
    let mut picked = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if picked.len() == k {
            break;
        }
        if used.insert(label.as_str()) {
            picked.push(i);
        } else {
            skipped.push(i);
        }
    }
    picked.extend(skipped.into_iter().take(k - picked.len()));
    picked.sort_unstable();
    Ok(picked)
}

/// Top `k` rows by their individual expectation `Σ_m P[m]·C[i][m]`, ties to
/// the lower row. Ignores interactions between the chosen replies.
pub fn individual_sim_select(c: &SimilarityMatrix, p: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, c.rows())?;
    if p.len() != c.cols() {
        return Err(Error::DimensionMismatch {
            expected: c.cols(),
            got: p.len(),
        });
    }
    let mut rows: Vec<(usize, f64)> = (0..c.rows())
        .map(|i| (i, c.row(i).iter().zip(p).map(|(x, q)| x * q).sum()))
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(rows.into_iter().take(k).map(|(i, _)| i).collect())
}
