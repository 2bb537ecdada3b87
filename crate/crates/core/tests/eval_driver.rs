use std::collections::HashMap;

use codi_core::eval::{
    evaluate, score_predictions, EvalDialog, EvalOptions, EvalSet, EvalTurn, HistoryMode, Metric, PredictionRecord,
};
use codi_core::teacher::{CompletionModel, GenerationRequest, TeacherError, TurnResponse, Usage};

fn respond(text: impl Into<String>) -> Result<TurnResponse, TeacherError> {
    Ok(TurnResponse { text: text.into(), usage: Usage::default(), latency: Default::default() })
}

/// Text of the last `[ROLE] ... [/ROLE]` turn of `role` in `prompt`.
fn last_turn<'a>(prompt: &'a str, role: &str) -> Option<&'a str> {
    let open = format!("[{role}] ");
    let close = format!(" [/{role}]");
    let start = prompt.rfind(&open)? + open.len();
    let end = start + prompt[start..].find(&close)?;
    Some(&prompt[start..end])
}

/// Looks the current question up in the gold answers.
struct Oracle(HashMap<String, String>);

impl CompletionModel for Oracle {
    fn generate(&self, r: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError> {
        assert!(r.prompt.ends_with("\n[AGENT] "));
        let q = last_turn(r.prompt, "USER").unwrap();
        respond(format!("{} [/AGENT]\n[USER] ignored", self.0[q]))
    }

    fn model_id(&self) -> &str {
        "oracle"
    }
}

/// Answers the first question correctly, then repeats its previous answer.
struct Degrading;

impl CompletionModel for Degrading {
    fn generate(&self, r: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError> {
        if r.turn_index == 1 {
            return respond("The sky is blue");
        }
        let history = r.prompt.strip_suffix("\n[AGENT] ").unwrap();
        respond(last_turn(history, "AGENT").unwrap().to_string())
    }

    fn model_id(&self) -> &str {
        "degrading"
    }
}

fn turn(i: usize, q: &str, a: &str) -> EvalTurn {
    EvalTurn { turn_index: i, question: q.into(), references: vec![a.into()] }
}

fn sky_set() -> EvalSet {
    EvalSet {
        dialogs: vec![EvalDialog {
            dialog_id: "d1".into(),
            context: "The sky is blue. Grass is green.".into(),
            turns: vec![turn(1, "What color is the sky?", "blue"), turn(2, "What is blue?", "the sky")],
        }],
    }
}

fn larger_set() -> EvalSet {
    let mut dialogs = sky_set().dialogs;
    dialogs.push(EvalDialog {
        dialog_id: "d2".into(),
        context: "Cotton was a white kitten. She lived in a barn.".into(),
        turns: vec![
            turn(1, "What color was Cotton?", "white"),
            turn(2, "Where did she live?", "in a barn"),
            turn(3, "Was she a dog?", "no"),
        ],
    });
    dialogs.push(EvalDialog {
        dialog_id: "d0".into(),
        context: "Alex went to the store.".into(),
        turns: vec![turn(1, "Who went?", "Alex")],
    });
    EvalSet { dialogs }
}

fn oracle_for(set: &EvalSet) -> Oracle {
    Oracle(
        set.dialogs
            .iter()
            .flat_map(|d| d.turns.iter().map(|t| (t.question.clone(), t.references[0].clone())))
            .collect(),
    )
}

#[test]
fn oracle_model_scores_perfectly_in_both_modes() {
    let set = larger_set();
    let model = oracle_for(&set);
    for mode in [HistoryMode::Gold, HistoryMode::Pred] {
        for metric in Metric::ALL {
            let r = evaluate(&model, &set, metric, mode, &EvalOptions::default());
            assert_eq!(r.corpus_mean, 1.0, "{metric} {mode}");
            assert_eq!(r.per_example.len(), 6);
            assert!(r.failed_dialogs.is_empty());
        }
    }
}

#[test]
fn degrading_model_depends_on_history_mode() {
    let set = sky_set();
    let gold = evaluate(&Degrading, &set, Metric::Recall, HistoryMode::Gold, &EvalOptions::default());
    let pred = evaluate(&Degrading, &set, Metric::Recall, HistoryMode::Pred, &EvalOptions::default());
    assert_eq!(gold.per_turn_mean[&1], 1.0);
    assert_eq!(pred.per_turn_mean[&1], 1.0);
    // Gold history shows "blue" as the earlier answer; the echo misses "sky".
    assert_eq!(gold.per_example[1].prediction, "blue");
    assert_eq!(gold.per_turn_mean[&2], 0.0);
    // Own history shows "The sky is blue", which covers "the sky".
    assert_eq!(pred.per_example[1].prediction, "The sky is blue");
    assert_eq!(pred.per_turn_mean[&2], 1.0);
}

#[test]
fn aggregation_identities() {
    let set = larger_set();
    for mode in [HistoryMode::Gold, HistoryMode::Pred] {
        let r = evaluate(&Degrading, &set, Metric::F1, mode, &EvalOptions { concurrency: 3, ..Default::default() });
        let n: usize = r.per_turn_count.values().sum();
        assert_eq!(n, r.per_example.len());
        let weighted: f64 = r.per_turn_mean.iter().map(|(t, m)| m * r.per_turn_count[t] as f64).sum::<f64>() / n as f64;
        assert!((weighted - r.corpus_mean).abs() < 1e-12);
        for (t, m) in &r.per_turn_mean {
            let scores: Vec<f64> = r.per_example.iter().filter(|e| e.turn_index == *t).map(|e| e.score).collect();
            assert!((scores.iter().sum::<f64>() / scores.len() as f64 - m).abs() < 1e-12);
        }
        let ids: Vec<(&str, usize)> = r.per_example.iter().map(|e| (e.dialog_id.as_str(), e.turn_index)).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }
}

#[test]
fn concurrency_does_not_change_results() {
    let set = larger_set();
    let one = evaluate(&Degrading, &set, Metric::RougeL, HistoryMode::Pred, &EvalOptions::default());
    let many = evaluate(&Degrading, &set, Metric::RougeL, HistoryMode::Pred, &EvalOptions { concurrency: 8, ..Default::default() });
    assert_eq!(one, many);
}

/// Fails on one dialog's second turn.
struct FailsOn(&'static str);

impl CompletionModel for FailsOn {
    fn generate(&self, r: &GenerationRequest<'_>) -> Result<TurnResponse, TeacherError> {
        if r.link_id == self.0 && r.turn_index == 2 {
            return Err(TeacherError::ServerError(503));
        }
        respond("x")
    }

    fn model_id(&self) -> &str {
        "fails"
    }
}

#[test]
fn failed_dialogs_are_skipped_and_reported() {
    let set = larger_set();
    let r = evaluate(&FailsOn("d2"), &set, Metric::Recall, HistoryMode::Gold, &EvalOptions::default());
    assert_eq!(r.dialogs_total, 3);
    assert_eq!(r.dialogs_scored, 2);
    assert_eq!(r.failed_dialogs.len(), 1);
    assert_eq!(r.failed_dialogs[0].dialog_id, "d2");
    assert!(r.failed_dialogs[0].reason.starts_with("ServerError"));
    assert!(r.per_example.iter().all(|e| e.dialog_id != "d2"));
    assert!((r.scored_fraction() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn offline_predictions() {
    let set = larger_set();
    let preds = vec![
        PredictionRecord { dialog_id: "d1".into(), turn_index: 1, prediction: "Blue.".into() },
        PredictionRecord { dialog_id: "d1".into(), turn_index: 2, prediction: "the sky".into() },
        PredictionRecord { dialog_id: "d2".into(), turn_index: 2, prediction: "in the barn".into() },
        PredictionRecord { dialog_id: "zz".into(), turn_index: 1, prediction: "stray".into() },
    ];
    let r = score_predictions(&set, &preds, Metric::Recall);
    assert_eq!(r.missing_predictions, 3);
    assert_eq!(r.per_example.len(), 6);
    // d1: 1, 1; d2: 0 (missing), 1, 0 (missing); d0: 0 (missing).
    assert!((r.corpus_mean - 3.0 / 6.0).abs() < 1e-12);
    assert_eq!(r.per_turn_mean[&2], 1.0);
    assert!(r.history_mode.is_none());
}

#[test]
fn report_tables() {
    let r = score_predictions(&sky_set(), &[], Metric::F1);
    let csv = r.per_turn_csv();
    assert!(csv.lines().next().unwrap().contains("turn"));
    assert_eq!(csv.lines().count(), 3);
    assert!(r.summary_table().contains("f1"));
    assert!(!r.per_turn_table().is_empty());
}
