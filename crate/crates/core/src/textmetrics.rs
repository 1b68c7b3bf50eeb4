//! Tokenization and lexical overlap metrics.
//!
//! All scores are F-measures over clipped multiset overlap:
//!
//! ```text
//! overlap   = sum over distinct grams g of min(count_pred(g), count_ref(g))
//! precision = overlap / |grams(pred)|
//! recall    = overlap / |grams(ref)|
//! f1        = 2 * precision * recall / (precision + recall)
//! ```
//!
//! A comparison in which either side has no grams of the requested order
//! scores 0, including empty-vs-empty.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the 1/2/3-gram components of [`weighted_rouge`].
pub const ROUGE_WEIGHTS: [f64; 3] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0];

/// Lowercased word tokens of a text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tokens(Vec<String>);

impl Tokens {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        Tokens(tokens)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for Tokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl<'a> IntoIterator for &'a Tokens {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Byte spans of the tokens in `text`, in order. Tokens are maximal runs of
/// alphanumeric characters.
pub(crate) fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercase and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Tokens {
    Tokens(
        token_spans(text)
            .into_iter()
            .map(|(s, e)| text[s..e].to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

fn f_measure(overlap: usize, pred_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 || pred_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap<K: std::hash::Hash + Eq>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter_map(|(g, &c)| large.get(g).map(|&d| c.min(d))).sum()
}

/// ROUGE-n F1 with clipped n-gram counts. Zero when either side is shorter
/// than `n`.
pub fn rouge_n(pred: &Tokens, reference: &Tokens, n: usize) -> f64 {
    let pc = ngram_counts(&pred.0, n);
    let rc = ngram_counts(&reference.0, n);
    if pc.is_empty() || rc.is_empty() {
        return 0.0;
    }
    let overlap = clipped_overlap(&pc, &rc);
    f_measure(overlap, pred.len() + 1 - n, reference.len() + 1 - n)
}

/// Unigram F1 over multiset overlap.
pub fn term_f1(a: &Tokens, b: &Tokens) -> f64 {
    rouge_n(a, b, 1)
}

/// `rouge1/6 + rouge2/3 + rouge3/2`.
pub fn weighted_rouge(pred: &Tokens, reference: &Tokens) -> f64 {
    ROUGE_WEIGHTS
        .iter()
        .enumerate()
        .map(|(i, w)| w * rouge_n(pred, reference, i + 1))
        .sum()
}

/// Mean over replies of the best [`weighted_rouge`] against each of the
/// other replies. Lower means a more diverse set.
pub fn self_rouge(replies: &[Tokens]) -> Result<f64> {
    if replies.len() < 2 {
        return Err(Error::TooFewReplies);
    }
    let total: f64 = replies
        .iter()
        .enumerate()
        .map(|(k, pred)| {
            replies
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, r)| weighted_rouge(pred, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / replies.len() as f64)
}

/// Unigram multiset of a text, sorted by token, for repeated F1 evaluation
/// against many partners.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bag {
    counts: Vec<(String, u32)>,
    len: usize,
}

impl Bag {
    pub fn from_tokens(tokens: &Tokens) -> Self {
        let mut sorted: Vec<&String> = tokens.iter().collect();
        sorted.sort_unstable();
        let mut counts: Vec<(String, u32)> = Vec::new();
        for t in sorted {
            match counts.last_mut() {
                Some((last, c)) if last == t => *c += 1,
                _ => counts.push((t.clone(), 1)),
            }
        }
        Bag {
            counts,
            len: tokens.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Same value as [`term_f1`] on the underlying token sequences.
    pub fn f1(&self, other: &Bag) -> f64 {
        let (mut i, mut j, mut overlap) = (0, 0, 0usize);
        while i < self.counts.len() && j < other.counts.len() {
            let (a, ca) = &self.counts[i];
            let (b, cb) = &other.counts[j];
            match a.cmp(b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    overlap += (*ca).min(*cb) as usize;
                    i += 1;
                    j += 1;
                }
            }
        }
        f_measure(overlap, self.len, other.len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tokens {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(t("Hello, world!").into_inner(), vec!["hello", "world"]);
        assert!(t("").is_empty());
        assert_eq!(t("I'm ok").into_inner(), vec!["i", "m", "ok"]);
        assert_eq!(t("  --  ").len(), 0);
        assert_eq!(t("Ünïcode ÄND 42x").into_inner(), vec!["ünïcode", "änd", "42x"]);
    }

    #[test]
    fn term_f1_examples() {
        assert_eq!(term_f1(&t("a b c"), &t("a b c")), 1.0);
        assert_eq!(term_f1(&t("a b"), &t("c d")), 0.0);
        assert!((term_f1(&t("a b c"), &t("b c d")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(term_f1(&t(""), &t("")), 0.0);
        assert_eq!(term_f1(&t("a"), &t("")), 0.0);
    }

    #[test]
    fn term_f1_clips_repeats() {
        // overlap min(3,1) = 1; P = 1/3, R = 1
        let v = term_f1(&t("a a a"), &t("a"));
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_rouge_examples() {
        assert_eq!(weighted_rouge(&t("a b c d"), &t("a b c d")), 1.0);
        let v = weighted_rouge(&t("a b c"), &t("a b d"));
        assert!((v - (2.0 / 18.0 + 1.0 / 6.0)).abs() < 1e-12);
        assert!((v - 0.2778).abs() < 1e-4);
        assert_eq!(weighted_rouge(&t("x"), &t("a b c")), 0.0);
    }

    #[test]
    fn short_reference_zeroes_higher_orders() {
        // only the unigram component survives
        let v = weighted_rouge(&t("a b"), &t("a b"));
        assert!((v - (1.0 / 6.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn self_rouge_examples() {
        let same = vec![t("a b c"), t("a b c"), t("a b c")];
        assert_eq!(self_rouge(&same).unwrap(), 1.0);
        let disjoint = vec![t("a b c"), t("d e f"), t("g h i")];
        assert_eq!(self_rouge(&disjoint).unwrap(), 0.0);
        let mixed = vec![t("a b c"), t("a b c"), t("x y z")];
        assert!((self_rouge(&mixed).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_rouge_needs_two() {
        let err = self_rouge(&[t("a b c")]).unwrap_err();
        assert_eq!(err.to_string(), "need at least two replies");
    }

    #[test]
    fn bag_matches_term_f1() {
        let pairs = [
            ("a b c", "b c d"),
            ("a a b", "a b b b"),
            ("", "x"),
            ("hello there friend", "hello hello"),
        ];
        for (a, b) in pairs {
            let want = term_f1(&t(a), &t(b));
            let got = Bag::from_tokens(&t(a)).f1(&Bag::from_tokens(&t(b)));
            assert_eq!(want, got, "{a:?} vs {b:?}");
        }
    }
}
