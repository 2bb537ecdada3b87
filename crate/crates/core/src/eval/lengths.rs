//! Response-length statistics in whitespace-separated words.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LengthError {
    #[error("no texts to measure")]
    EmptyInput,
    #[error("field path {path:?}: {detail}")]
    Field { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub average: f64,
    pub median: usize,
    pub p90: usize,
    pub count: usize,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Nearest-rank percentile of an ascending sample: the element at 1-based
/// rank `ceil(percent/100 · n)`.
pub fn nearest_rank(sorted: &[usize], percent: u32) -> usize {
    assert!(!sorted.is_empty() && (1..=100).contains(&percent));
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn length_stats<S: AsRef<str>>(texts: &[S]) -> Result<LengthStats, LengthError> {
    if texts.is_empty() {
        return Err(LengthError::EmptyInput);
    }
    let mut counts: Vec<usize> = texts.iter().map(|t| word_count(t.as_ref())).collect();
    counts.sort_unstable();
    let total: usize = counts.iter().sum();
    Ok(LengthStats {
        average: total as f64 / counts.len() as f64,
        median: nearest_rank(&counts, 50),
        p90: nearest_rank(&counts, 90),
        count: counts.len(),
    })
}

/// Collects the strings addressed by `path` in `value`.
///
/// The path is a dot-separated list of object keys; a `[]` suffix on a
/// segment (or a bare `[]` segment) iterates over an array. For example
/// `data[].answers[].input_text` selects every answer text of a CoQA file.
/// Every addressed value must exist and be a string.
pub fn field_strings(value: &Value, path: &str) -> Result<Vec<String>, LengthError> {
    let err = |detail: String| LengthError::Field {
        path: path.to_owned(),
        detail,
    };
    let mut current: Vec<&Value> = vec![value];
    for segment in path.split('.').filter(|s| !s.is_empty()) {
        let (key, iterate) = match segment.strip_suffix("[]") {
            Some(k) => (k, true),
            None => (segment, false),
        };
        let mut next = Vec::with_capacity(current.len());
        for v in current {
            let v = if key.is_empty() {
                v
            } else {
                v.get(key)
                    .ok_or_else(|| err(format!("missing key {key:?}")))?
            };
            if iterate {
                let items = v
                    .as_array()
                    .ok_or_else(|| err(format!("{key:?} is not an array")))?;
                next.extend(items);
            } else {
                next.push(v);
            }
        }
        current = next;
    }
    current
        .into_iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| err(format!("value {v} is not a string")))
        })
        .collect()
}
