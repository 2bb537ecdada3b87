//! Grounded conversational QA evaluation.
//!
//! Metrics follow the extractive-QA convention for recall and F1
//! (lowercase, strip punctuation, drop articles) and plain lowercase tokens
//! for ROUGE. Multi-reference turns take the best score over references.

mod dataset;
mod driver;
mod lengths;
mod metrics;

pub use dataset::{
    load_evalset, parse_evalset, DatasetError, EvalDialog, EvalFormat, EvalSet, EvalTurn,
    PredictionRecord,
};
pub use driver::{
    clean_prediction, evaluate, score_predictions, turn_prompt, DialogFailure, EvalOptions,
    ExampleScore, HistoryMode, MetricReport,
};
pub use lengths::{field_strings, length_stats, nearest_rank, word_count, LengthError, LengthStats};
pub use metrics::{
    f1, lcs_len, multi_reference, multiset_overlap, normalize, recall, rouge_l, rouge_n,
    rouge_tokens, token_scores, Metric, Scores,
};
