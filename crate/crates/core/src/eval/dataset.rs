//! Conversational QA evaluation sets and their on-disk formats.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: schema error: {detail}", path.display())]
    Schema { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    fn schema(path: &Path, detail: impl Into<String>) -> Self {
        DatasetError::Schema {
            path: path.to_owned(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTurn {
    /// 1-based and consecutive within a dialog.
    pub turn_index: usize,
    pub question: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalDialog {
    pub dialog_id: String,
    pub context: String,
    pub turns: Vec<EvalTurn>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub dialogs: Vec<EvalDialog>,
}

impl EvalSet {
    pub fn validate(&self) -> Result<(), String> {
        for d in &self.dialogs {
            for (i, t) in d.turns.iter().enumerate() {
                if t.turn_index != i + 1 {
                    return Err(format!(
                        "dialog {}: turn {} has index {}",
                        d.dialog_id,
                        i + 1,
                        t.turn_index
                    ));
                }
                if t.references.is_empty() {
                    return Err(format!(
                        "dialog {}: turn {} has no reference answer",
                        d.dialog_id, t.turn_index
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn turn_count(&self) -> usize {
        self.dialogs.iter().map(|d| d.turns.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFormat {
    Coqa,
    Quac,
}

impl FromStr for EvalFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coqa" => Ok(EvalFormat::Coqa),
            "quac" => Ok(EvalFormat::Quac),
            other => Err(format!("unknown eval format {other:?} (expected coqa or quac)")),
        }
    }
}

impl fmt::Display for EvalFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalFormat::Coqa => "coqa",
            EvalFormat::Quac => "quac",
        })
    }
}

// CoQA v1.0 layout. Unused fields (spans, rationales, source) are ignored.
#[derive(Deserialize)]
struct CoqaFile {
    data: Vec<CoqaStory>,
}

#[derive(Deserialize)]
struct CoqaStory {
    id: String,
    story: String,
    questions: Vec<CoqaText>,
    answers: Vec<CoqaText>,
    #[serde(default)]
    additional_answers: BTreeMap<String, Vec<CoqaText>>,
}

#[derive(Deserialize)]
struct CoqaText {
    input_text: String,
    turn_id: usize,
}

// QuAC layout (SQuAD-style articles with one dialog per paragraph).
#[derive(Deserialize)]
struct QuacFile {
    data: Vec<QuacArticle>,
}

#[derive(Deserialize)]
struct QuacArticle {
    paragraphs: Vec<QuacParagraph>,
}

#[derive(Deserialize)]
struct QuacParagraph {
    #[serde(default)]
    id: Option<String>,
    context: String,
    qas: Vec<QuacQa>,
}

#[derive(Deserialize)]
struct QuacQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<QuacAnswer>,
    #[serde(default)]
    orig_answer: Option<QuacAnswer>,
}

#[derive(Deserialize)]
struct QuacAnswer {
    text: String,
}

pub fn load_evalset(path: &Path, format: EvalFormat) -> Result<EvalSet, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_evalset(&text, format).map_err(|detail| DatasetError::schema(path, detail))
}

pub fn parse_evalset(text: &str, format: EvalFormat) -> Result<EvalSet, String> {
    let set = match format {
        EvalFormat::Coqa => parse_coqa(text)?,
        EvalFormat::Quac => parse_quac(text)?,
    };
    set.validate()?;
    Ok(set)
}

fn parse_coqa(text: &str) -> Result<EvalSet, String> {
    let file: CoqaFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut dialogs = Vec::with_capacity(file.data.len());
    for story in file.data {
        if story.questions.len() != story.answers.len() {
            return Err(format!(
                "story {}: {} questions but {} answers",
                story.id,
                story.questions.len(),
                story.answers.len()
            ));
        }
        let mut turns = Vec::with_capacity(story.questions.len());
        for (i, (q, a)) in story.questions.iter().zip(&story.answers).enumerate() {
            if q.turn_id != i + 1 || a.turn_id != q.turn_id {
                return Err(format!(
                    "story {}: turn ids out of order at position {} (question {}, answer {})",
                    story.id,
                    i + 1,
                    q.turn_id,
                    a.turn_id
                ));
            }
            let mut references = vec![a.input_text.clone()];
            // Annotators that skipped a turn simply contribute no reference for it.
            references.extend(story.additional_answers.values().filter_map(|extra| {
                extra
                    .iter()
                    .find(|x| x.turn_id == q.turn_id)
                    .map(|x| x.input_text.clone())
            }));
            turns.push(EvalTurn {
                turn_index: q.turn_id,
                question: q.input_text.clone(),
                references,
            });
        }
        dialogs.push(EvalDialog {
            dialog_id: story.id,
            context: story.story,
            turns,
        });
    }
    Ok(EvalSet { dialogs })
}

fn parse_quac(text: &str) -> Result<EvalSet, String> {
    let file: QuacFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut dialogs = Vec::new();
    for paragraph in file.data.into_iter().flat_map(|a| a.paragraphs) {
        let dialog_id = match &paragraph.id {
            Some(id) => id.clone(),
            None => paragraph
                .qas
                .first()
                .map(|qa| qa.id.split("_q#").next().unwrap_or(&qa.id).to_owned())
                .ok_or("paragraph without id or questions")?,
        };
        let mut turns = Vec::with_capacity(paragraph.qas.len());
        for (i, qa) in paragraph.qas.into_iter().enumerate() {
            let mut references: Vec<String> = qa.answers.into_iter().map(|a| a.text).collect();
            if references.is_empty() {
                references.extend(qa.orig_answer.map(|a| a.text));
            }
            if references.is_empty() {
                return Err(format!("question {} has no answers", qa.id));
            }
            turns.push(EvalTurn {
                turn_index: i + 1,
                question: qa.question,
                references,
            });
        }
        dialogs.push(EvalDialog {
            dialog_id,
            context: paragraph.context,
            turns,
        });
    }
    Ok(EvalSet { dialogs })
}

/// One line of an offline predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub dialog_id: String,
    pub turn_index: usize,
    pub prediction: String,
}
