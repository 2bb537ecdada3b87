//! Token-overlap metrics for grounded QA and summarization-style scoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Extractive-QA normalization: lowercase, drop ASCII punctuation, drop the
/// articles a/an/the, split on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

/// ROUGE tokenization: lowercase whitespace tokens with trailing periods removed.
/// Articles and other punctuation are kept.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_end_matches('.'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    const PERFECT: Scores = Scores {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };
    const ZERO: Scores = Scores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_overlap(overlap: usize, gold_len: usize, pred_len: usize) -> Self {
        match (gold_len, pred_len) {
            (0, 0) => Self::PERFECT,
            (0, _) => Scores { recall: 1.0, ..Self::ZERO },
            (_, 0) => Self::ZERO,
            _ if overlap == 0 => Self::ZERO,
            _ => {
                let precision = overlap as f64 / pred_len as f64;
                let recall = overlap as f64 / gold_len as f64;
                Scores {
                    precision,
                    recall,
                    f1: 2.0 * precision * recall / (precision + recall),
                }
            }
        }
    }
}

/// Size of the multiset intersection.
pub fn multiset_overlap<T: Eq + std::hash::Hash>(gold: &[T], pred: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::with_capacity(gold.len());
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut overlap = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    overlap
}

/// Precision/recall/F1 over normalized token multisets.
pub fn token_scores(gold: &str, pred: &str) -> Scores {
    let g = normalize(gold);
    let p = normalize(pred);
    Scores::from_overlap(multiset_overlap(&g, &p), g.len(), p.len())
}

/// Fraction of normalized gold tokens found in the prediction; 1.0 for empty gold.
pub fn recall(gold: &str, pred: &str) -> f64 {
    token_scores(gold, pred).recall
}

pub fn f1(gold: &str, pred: &str) -> f64 {
    token_scores(gold, pred).f1
}

fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

pub fn rouge_n(gold: &str, pred: &str, n: usize) -> Scores {
    assert!(n >= 1, "ROUGE-N needs n ≥ 1");
    let g = rouge_tokens(gold);
    let p = rouge_tokens(pred);
    let gn = ngrams(&g, n);
    let pn = ngrams(&p, n);
    Scores::from_overlap(multiset_overlap(&gn, &pn), gn.len(), pn.len())
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(gold: &str, pred: &str) -> Scores {
    let g = rouge_tokens(gold);
    let p = rouge_tokens(pred);
    Scores::from_overlap(lcs_len(&g, &p), g.len(), p.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    F1,
    Rouge1,
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Recall,
        Metric::F1,
        Metric::Rouge1,
        Metric::Rouge2,
        Metric::RougeL,
    ];

    /// Scalar score; ROUGE variants report their F-measure.
    pub fn score(self, gold: &str, pred: &str) -> f64 {
        match self {
            Metric::Recall => recall(gold, pred),
            Metric::F1 => f1(gold, pred),
            Metric::Rouge1 => rouge_n(gold, pred, 1).f1,
            Metric::Rouge2 => rouge_n(gold, pred, 2).f1,
            Metric::RougeL => rouge_l(gold, pred).f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Rouge1 => "rouge1",
            Metric::Rouge2 => "rouge2",
            Metric::RougeL => "rougeL",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?} (expected recall, f1, rouge1, rouge2 or rougeL)"))
    }
}

/// Best score over the references. Panics on an empty reference list.
pub fn multi_reference<S: AsRef<str>>(metric: Metric, references: &[S], pred: &str) -> f64 {
    assert!(!references.is_empty(), "at least one reference is required");
    references
        .iter()
        .map(|r| metric.score(r.as_ref(), pred))
        .fold(f64::NEG_INFINITY, f64::max)
}
