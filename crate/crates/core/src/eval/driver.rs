//! Turn-by-turn conversational evaluation and report aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::dataset::{EvalDialog, EvalSet, PredictionRecord};
use super::metrics::{multi_reference, Metric};
use crate::conversation::{serialize, Conversation, Role, Turn};
use crate::teacher::{CompletionModel, GenerationRequest};

/// What the model sees as prior answers when predicting turn `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    /// Gold questions with gold answers.
    Gold,
    /// Gold questions with the model's own earlier answers.
    Pred,
}

impl FromStr for HistoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(HistoryMode::Gold),
            "pred" => Ok(HistoryMode::Pred),
            other => Err(format!("unknown history mode {other:?} (expected gold or pred)")),
        }
    }
}

impl fmt::Display for HistoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HistoryMode::Gold => "gold",
            HistoryMode::Pred => "pred",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub dialog_id: String,
    pub turn_index: usize,
    pub score: f64,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogFailure {
    pub dialog_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    /// `None` for offline scoring of a predictions file.
    pub history_mode: Option<HistoryMode>,
    pub per_example: Vec<ExampleScore>,
    pub per_turn_mean: BTreeMap<usize, f64>,
    pub per_turn_count: BTreeMap<usize, usize>,
    pub corpus_mean: f64,
    pub dialogs_total: usize,
    pub dialogs_scored: usize,
    pub failed_dialogs: Vec<DialogFailure>,
    pub missing_predictions: usize,
}

impl MetricReport {
    /// Sorts examples by `(dialog_id, turn_index)` and computes the aggregates.
    pub fn assemble(
        metric: Metric,
        history_mode: Option<HistoryMode>,
        mut per_example: Vec<ExampleScore>,
        dialogs_total: usize,
        mut failed_dialogs: Vec<DialogFailure>,
    ) -> Self {
        per_example.sort_by(|a, b| {
            (a.dialog_id.as_str(), a.turn_index).cmp(&(b.dialog_id.as_str(), b.turn_index))
        });
        failed_dialogs.sort_by(|a, b| a.dialog_id.cmp(&b.dialog_id));
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for ex in &per_example {
            let e = sums.entry(ex.turn_index).or_default();
            e.0 += ex.score;
            e.1 += 1;
        }
        let corpus_mean = if per_example.is_empty() {
            0.0
        } else {
            per_example.iter().map(|e| e.score).sum::<f64>() / per_example.len() as f64
        };
        Self {
            metric,
            history_mode,
            per_turn_mean: sums.iter().map(|(t, (s, n))| (*t, s / *n as f64)).collect(),
            per_turn_count: sums.iter().map(|(t, (_, n))| (*t, *n)).collect(),
            per_example,
            corpus_mean,
            dialogs_scored: dialogs_total - failed_dialogs.len(),
            dialogs_total,
            failed_dialogs,
            missing_predictions: 0,
        }
    }

    pub fn scored_fraction(&self) -> f64 {
        if self.dialogs_total == 0 {
            1.0
        } else {
            self.dialogs_scored as f64 / self.dialogs_total as f64
        }
    }

    pub fn summary_table(&self) -> String {
        let mode = self
            .history_mode
            .map_or_else(|| "offline".to_owned(), |m| m.to_string());
        let rows = [
            ("metric", self.metric.to_string()),
            ("history", mode),
            (
                "dialogs",
                format!("{}/{} scored", self.dialogs_scored, self.dialogs_total),
            ),
            ("examples", self.per_example.len().to_string()),
            ("missing", self.missing_predictions.to_string()),
            ("mean", format!("{:.4}", self.corpus_mean)),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<10}{v}");
        }
        out
    }

    pub fn per_turn_table(&self) -> String {
        let mut out = format!("{:<6}{:>8}{:>10}\n", "turn", "n", "mean");
        for (t, mean) in &self.per_turn_mean {
            let _ = writeln!(out, "{t:<6}{:>8}{mean:>10.4}", self.per_turn_count[t]);
        }
        out
    }

    pub fn per_turn_csv(&self) -> String {
        let mut out = String::from("turn_index,count,mean\n");
        for (t, mean) in &self.per_turn_mean {
            let _ = writeln!(out, "{t},{},{mean}", self.per_turn_count[t]);
        }
        out
    }
}

/// Scores a predictions file against an eval set. Turns without a prediction
/// score 0 and are counted in `missing_predictions`.
pub fn score_predictions(set: &EvalSet, predictions: &[PredictionRecord], metric: Metric) -> MetricReport {
    let by_key: HashMap<(&str, usize), &str> = predictions
        .iter()
        .map(|p| ((p.dialog_id.as_str(), p.turn_index), p.prediction.as_str()))
        .collect();
    let mut missing = 0;
    let mut examples = Vec::with_capacity(set.turn_count());
    for d in &set.dialogs {
        for t in &d.turns {
            let (score, prediction) = match by_key.get(&(d.dialog_id.as_str(), t.turn_index)) {
                Some(p) => (multi_reference(metric, &t.references, p), (*p).to_owned()),
                None => {
                    missing += 1;
                    (0.0, String::new())
                }
            };
            examples.push(ExampleScore {
                dialog_id: d.dialog_id.clone(),
                turn_index: t.turn_index,
                score,
                prediction,
            });
        }
    }
    let mut report = MetricReport::assemble(metric, None, examples, set.dialogs.len(), Vec::new());
    report.missing_predictions = missing;
    report
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub concurrency: usize,
    pub context_role: Role,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            concurrency: 1,
            context_role: Role::context(),
        }
    }
}

/// Prompt for answering `question` after `history` (question, answer) pairs:
/// the tagged conversation followed by an open AGENT tag.
pub fn turn_prompt(
    context_role: &Role,
    context: &str,
    history: &[(&str, &str)],
    question: &str,
) -> Result<String, crate::conversation::FormatError> {
    let mut turns = vec![Turn::new(context_role.clone(), context)];
    for (q, a) in history {
        turns.push(Turn::new(Role::user(), *q));
        turns.push(Turn::new(Role::agent(), *a));
    }
    turns.push(Turn::new(Role::user(), question));
    let mut prompt = serialize(&Conversation::new("", turns))?;
    prompt.push('\n');
    prompt.push_str(&Role::agent().open_tag());
    Ok(prompt)
}

/// Cuts a completion at the first AGENT closing tag and trims it.
pub fn clean_prediction(raw: &str) -> String {
    let agent = Role::agent();
    let body = raw.trim_start();
    let body = body
        .strip_prefix(agent.open_tag().as_str())
        .unwrap_or(body);
    let close = format!("[/{agent}]");
    let body = body.find(&close).map_or(body, |i| &body[..i]);
    body.trim().to_owned()
}

fn evaluate_dialog(
    model: &dyn CompletionModel,
    dialog: &EvalDialog,
    metric: Metric,
    mode: HistoryMode,
    opts: &EvalOptions,
) -> Result<Vec<ExampleScore>, String> {
    let mut predictions: Vec<String> = Vec::with_capacity(dialog.turns.len());
    let mut scores = Vec::with_capacity(dialog.turns.len());
    for (i, turn) in dialog.turns.iter().enumerate() {
        let history: Vec<(&str, &str)> = dialog.turns[..i]
            .iter()
            .zip(&predictions)
            .map(|(prior, pred)| {
                let answer = match mode {
                    HistoryMode::Gold => prior.references[0].as_str(),
                    HistoryMode::Pred => pred.as_str(),
                };
                (prior.question.as_str(), answer)
            })
            .collect();
        let prompt = turn_prompt(&opts.context_role, &dialog.context, &history, &turn.question)
            .map_err(|e| format!("TagCollision: {e}"))?;
        let request = GenerationRequest {
            prompt: &prompt,
            link_id: &dialog.dialog_id,
            turn_index: turn.turn_index,
            conversation_index: 0,
        };
        let response = model
            .generate(&request)
            .map_err(|e| format!("{}: {e}", e.reason()))?;
        let prediction = clean_prediction(&response.text);
        scores.push(ExampleScore {
            dialog_id: dialog.dialog_id.clone(),
            turn_index: turn.turn_index,
            score: multi_reference(metric, &turn.references, &prediction),
            prediction: prediction.clone(),
        });
        predictions.push(prediction);
    }
    Ok(scores)
}

/// Queries `model` turn by turn for every dialog. A dialog whose model call
/// fails is skipped as a whole and listed in `failed_dialogs`.
pub fn evaluate(
    model: &dyn CompletionModel,
    set: &EvalSet,
    metric: Metric,
    mode: HistoryMode,
    opts: &EvalOptions,
) -> MetricReport {
    let next = AtomicUsize::new(0);
    let examples = Mutex::new(Vec::with_capacity(set.turn_count()));
    let failures = Mutex::new(Vec::new());
    let workers = opts.concurrency.clamp(1, set.dialogs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(dialog) = set.dialogs.get(i) else { break };
                match evaluate_dialog(model, dialog, metric, mode, opts) {
                    Ok(scores) => examples.lock().unwrap().extend(scores),
                    Err(reason) => failures.lock().unwrap().push(DialogFailure {
                        dialog_id: dialog.dialog_id.clone(),
                        reason,
                    }),
                }
            });
        }
    });
    MetricReport::assemble(
        metric,
        Some(mode),
        examples.into_inner().unwrap(),
        set.dialogs.len(),
        failures.into_inner().unwrap(),
    )
}
