//! Per-role loss weights over serialized training text.
//!
//! [`annotate`] serializes a conversation and returns a span table that
//! partitions the text into tag, content, and separator byte ranges. A trainer
//! derives token masks by intersecting token offsets with these spans.

use std::collections::BTreeMap;

use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::conversation::{serialize_with, Conversation, FormatError, Role, SerializeOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("weight for {role} must be finite and non-negative, got {weight}")]
    InvalidWeight { role: String, weight: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("span table violates {0}")]
    BrokenPartition(String),
}

/// Role name to loss weight. Unlisted roles get `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightPolicy {
    pub weights: BTreeMap<Role, f64>,
    #[serde(default)]
    pub default: f64,
}

impl Default for WeightPolicy {
    /// `{AGENT: 1}`, everything else 0.
    fn default() -> Self {
        Self {
            weights: BTreeMap::from([(Role::agent(), 1.0)]),
            default: 0.0,
        }
    }
}

impl WeightPolicy {
    pub fn new(weights: BTreeMap<Role, f64>, default: f64) -> Result<Self, WeightError> {
        let policy = Self { weights, default };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        let entries = self
            .weights
            .iter()
            .map(|(r, w)| (r.to_string(), *w))
            .chain(std::iter::once(("<default>".to_owned(), self.default)));
        for (role, weight) in entries {
            if !weight.is_finite() || weight < 0.0 {
                return Err(WeightError::InvalidWeight { role, weight });
            }
        }
        Ok(())
    }

    pub fn weight(&self, role: &Role) -> f64 {
        self.weights.get(role).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    TagOpen,
    Content,
    TagClose,
    Separator,
}

/// A byte range `[start, end)` of the serialized text. Separators carry no role.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub role: Option<Role>,
    pub kind: SpanKind,
    pub weight: f64,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Serialized as `[start, end, role, kind, weight]` to keep dataset lines compact.
impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(5)?;
        tup.serialize_element(&self.start)?;
        tup.serialize_element(&self.end)?;
        tup.serialize_element(&self.role)?;
        tup.serialize_element(&self.kind)?;
        tup.serialize_element(&self.weight)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (start, end, role, kind, weight) =
            <(usize, usize, Option<Role>, SpanKind, f64)>::deserialize(deserializer)?;
        Ok(Span {
            start,
            end,
            role,
            kind,
            weight,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub conversation_id: String,
    pub text: String,
    pub spans: Vec<Span>,
}

pub fn annotate(
    conversation: &Conversation,
    policy: &WeightPolicy,
) -> Result<WeightedExample, WeightError> {
    annotate_with(conversation, policy, &SerializeOptions::default())
}

pub fn annotate_with(
    conversation: &Conversation,
    policy: &WeightPolicy,
    opts: &SerializeOptions,
) -> Result<WeightedExample, WeightError> {
    policy.validate()?;
    let text = serialize_with(conversation, opts)?;
    let mut spans = Vec::with_capacity(conversation.turns.len() * 4);
    let mut pos = 0;
    let mut push = |len: usize, role: Option<&Role>, kind: SpanKind, weight: f64| {
        spans.push(Span {
            start: pos,
            end: pos + len,
            role: role.cloned(),
            kind,
            weight,
        });
        pos += len;
    };
    for (i, turn) in conversation.turns.iter().enumerate() {
        if i > 0 {
            push(opts.turn_separator.len(), None, SpanKind::Separator, 0.0);
        }
        let w = policy.weight(&turn.role);
        let role = Some(&turn.role);
        push(turn.role.open_tag().len(), role, SpanKind::TagOpen, w);
        push(turn.text.len(), role, SpanKind::Content, w);
        push(turn.role.close_tag().len(), role, SpanKind::TagClose, w);
    }
    let example = WeightedExample {
        conversation_id: conversation.id.clone(),
        text,
        spans,
    };
    debug_assert!(example.check_partition().is_ok());
    Ok(example)
}

impl WeightedExample {
    /// Verifies the spans are sorted, contiguous and cover `[0, text.len())`
    /// with every boundary on a UTF-8 character boundary.
    pub fn check_partition(&self) -> Result<(), WeightError> {
        let mut expected_start = 0;
        for (i, span) in self.spans.iter().enumerate() {
            if span.start != expected_start || span.end < span.start {
                return Err(WeightError::BrokenPartition(format!(
                    "contiguity at span {i} ({}..{})",
                    span.start, span.end
                )));
            }
            if !self.text.is_char_boundary(span.end) {
                return Err(WeightError::BrokenPartition(format!(
                    "char boundary at span {i} end {}",
                    span.end
                )));
            }
            if span.kind == SpanKind::Separator && span.role.is_some()
                || span.kind != SpanKind::Separator && span.role.is_none()
            {
                return Err(WeightError::BrokenPartition(format!(
                    "role assignment at span {i}"
                )));
            }
            if !span.weight.is_finite() || span.weight < 0.0 {
                return Err(WeightError::BrokenPartition(format!("weight at span {i}")));
            }
            expected_start = span.end;
        }
        if expected_start != self.text.len() {
            return Err(WeightError::BrokenPartition(format!(
                "coverage: spans end at {expected_start}, text has {} bytes",
                self.text.len()
            )));
        }
        Ok(())
    }

    pub fn content_spans(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(|s| s.kind == SpanKind::Content)
    }

    pub fn slice(&self, span: &Span) -> &str {
        &self.text[span.start..span.end]
    }
}
