//! Conversation data model and the tagged training-text format.
//!
//! A conversation serializes as one tagged block per turn:
//!
//! ```text
//! [USER] What color is the sky? [/USER]
//! [AGENT] The sky is blue. [/AGENT]
//! ```
//!
//! Every block is `"[" NAME "] " text " [/" NAME "]"` and blocks are joined by a
//! separator (default `"\n"`). There is no escaping: a turn text that contains
//! the opening or closing tag of any role used in the same conversation is
//! rejected with [`FormatError::TagCollision`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default role name for a prepended grounding document.
pub const DEFAULT_CONTEXT_ROLE: &str = "CONTEXT";

const MAX_ROLE_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("invalid role name {0:?}: expected an uppercase letter followed by up to 31 of [A-Z0-9_]")]
    InvalidRole(String),
    #[error("turn {turn} contains reserved tag {tag:?}")]
    TagCollision { turn: usize, tag: String },
    #[error("malformed tag at byte {0}")]
    MalformedTag(usize),
    #[error("turn for role {role} opened at byte {offset} is never closed")]
    UnbalancedTurn { role: String, offset: usize },
    #[error("unexpected trailing input at byte {0}")]
    TrailingGarbage(usize),
    #[error("context role {role} must appear at most once and only as the first turn (found at turn {turn})")]
    MisplacedContext { role: String, turn: usize },
}

/// A conversational role such as `USER`, `AGENT` or `CONTEXT`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Role(String);

impl Role {
    pub fn new(name: impl Into<String>) -> Result<Self, FormatError> {
        let name = name.into();
        if is_valid_role_name(&name) {
            Ok(Self(name))
        } else {
            Err(FormatError::InvalidRole(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn user() -> Self {
        Self("USER".to_owned())
    }

    pub fn agent() -> Self {
        Self("AGENT".to_owned())
    }

    pub fn context() -> Self {
        Self(DEFAULT_CONTEXT_ROLE.to_owned())
    }

    /// `"[NAME] "`
    pub fn open_tag(&self) -> String {
        format!("[{}] ", self.0)
    }

    /// `" [/NAME]"`
    pub fn close_tag(&self) -> String {
        format!(" [/{}]", self.0)
    }
}

fn is_valid_role_name(name: &str) -> bool {
    let bytes = name.as_bytes();
    match bytes.split_first() {
        Some((first, rest)) => {
            first.is_ascii_uppercase()
                && bytes.len() <= MAX_ROLE_LEN
                && rest
                    .iter()
                    .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || *b == b'_')
        }
        None => false,
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Role {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::new(s)
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Role::new(name).map_err(serde::de::Error::custom)
    }
}

/// Where a synthesized turn came from. Never part of the training text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub link_id: String,
    pub seed_id: Option<String>,
    pub phenomenon_id: Option<String>,
    /// Byte length of the raw teacher completion the turn was extracted from.
    pub teacher_raw_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializeOptions {
    pub turn_separator: String,
}

impl Default for SerializeOptions {
    fn default() -> Self {
        Self {
            turn_separator: "\n".to_owned(),
        }
    }
}

impl Conversation {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            id: id.into(),
            turns,
        }
    }

    /// Roles used by at least one turn, in name order.
    pub fn declared_roles(&self) -> BTreeSet<&Role> {
        self.turns.iter().map(|t| &t.role).collect()
    }

    /// Checks that `context_role` is used at most once, and only by the first turn.
    pub fn check_context(&self, context_role: &Role) -> Result<(), FormatError> {
        for (i, turn) in self.turns.iter().enumerate() {
            if &turn.role == context_role && i != 0 {
                return Err(FormatError::MisplacedContext {
                    role: context_role.to_string(),
                    turn: i,
                });
            }
        }
        Ok(())
    }

    /// Finds the first turn whose text contains a tag of a declared role.
    pub fn check_tags(&self) -> Result<(), FormatError> {
        let tags: Vec<String> = self
            .declared_roles()
            .into_iter()
            .flat_map(|r| [format!("[{r}]"), format!("[/{r}]")])
            .collect();
        for (i, turn) in self.turns.iter().enumerate() {
            if let Some(tag) = tags.iter().find(|tag| turn.text.contains(tag.as_str())) {
                return Err(FormatError::TagCollision {
                    turn: i,
                    tag: tag.clone(),
                });
            }
        }
        Ok(())
    }

    /// Equality on the `(role, text)` sequence, ignoring id and provenance.
    pub fn same_turns(&self, other: &Conversation) -> bool {
        self.turns.len() == other.turns.len()
            && self
                .turns
                .iter()
                .zip(&other.turns)
                .all(|(a, b)| a.role == b.role && a.text == b.text)
    }
}

pub fn serialize(conversation: &Conversation) -> Result<String, FormatError> {
    serialize_with(conversation, &SerializeOptions::default())
}

pub fn serialize_with(
    conversation: &Conversation,
    opts: &SerializeOptions,
) -> Result<String, FormatError> {
    conversation.check_tags()?;
    let mut out = String::new();
    for (i, turn) in conversation.turns.iter().enumerate() {
        if i > 0 {
            out.push_str(&opts.turn_separator);
        }
        out.push_str(&turn.role.open_tag());
        out.push_str(&turn.text);
        out.push_str(&turn.role.close_tag());
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Conversation, FormatError> {
    parse_with(text, &SerializeOptions::default())
}

/// Inverse of [`serialize_with`]: accepts exactly the strings it can produce.
/// The returned conversation has an empty id and no provenance.
pub fn parse_with(text: &str, opts: &SerializeOptions) -> Result<Conversation, FormatError> {
    let mut turns = Vec::new();
    let mut pos = 0;
    let sep = opts.turn_separator.as_str();
    if text.is_empty() {
        return Ok(Conversation::default());
    }
    loop {
        let (role, content_start) = parse_open_tag(text, pos)?;
        let close = role.close_tag();
        let content_end = text[content_start..]
            .find(&close)
            .map(|off| content_start + off)
            .ok_or_else(|| FormatError::UnbalancedTurn {
                role: role.to_string(),
                offset: pos,
            })?;
        turns.push(Turn::new(role, &text[content_start..content_end]));
        pos = content_end + close.len();
        if pos == text.len() {
            break;
        }
        if !text[pos..].starts_with(sep) || sep.is_empty() && !text[pos..].starts_with('[') {
            return Err(FormatError::TrailingGarbage(pos));
        }
        pos += sep.len();
        if pos == text.len() {
            return Err(FormatError::TrailingGarbage(pos - sep.len()));
        }
    }
    let conv = Conversation::new(String::new(), turns);
    conv.check_tags()?;
    Ok(conv)
}

/// Parses `"[NAME] "` at `pos`, returning the role and the byte offset just past it.
fn parse_open_tag(text: &str, pos: usize) -> Result<(Role, usize), FormatError> {
    let rest = &text[pos..];
    if !rest.starts_with('[') {
        return Err(FormatError::MalformedTag(pos));
    }
    let end = rest
        .find("] ")
        .filter(|&i| i <= MAX_ROLE_LEN + 1)
        .ok_or(FormatError::MalformedTag(pos))?;
    let role = Role::new(&rest[1..end]).map_err(|_| FormatError::MalformedTag(pos))?;
    Ok((role, pos + end + 2))
}
