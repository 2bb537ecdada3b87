//! Conversation links: per-turn prompt templates, seed injection and
//! linguistic-phenomenon instructions.
//!
//! Templates use four double-brace placeholders: `{{context}}`, `{{history}}`,
//! `{{seed}}` and `{{phenomenon}}`. Anything else inside `{{ }}` is rejected
//! when the template is parsed, before any teacher call is made.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_core::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::conversation::{serialize, Conversation, FormatError, Role};
use crate::rng::{below, invert_cumulative, unit_f64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("unknown placeholder {{{{{0}}}}}")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    UnterminatedPlaceholder(usize),
    #[error("link {0} requires a context but none was given")]
    MissingContext(String),
    #[error("link {0} requires a seed but none was given")]
    MissingSeed(String),
    #[error("placeholder {{{{{0}}}}} has no value")]
    UnresolvedPlaceholder(String),
    #[error("unknown phenomenon {0}")]
    UnknownPhenomenon(String),
    #[error("link {link}: {detail}")]
    InvalidLink { link: String, detail: String },
    #[error("duplicate seed id {0}")]
    DuplicateSeed(String),
    #[error("phenomenon {0} has an empty instruction")]
    EmptyInstruction(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Context,
    History,
    Seed,
    Phenomenon,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::Context,
        Placeholder::History,
        Placeholder::Seed,
        Placeholder::Phenomenon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Context => "context",
            Placeholder::History => "history",
            Placeholder::Seed => "seed",
            Placeholder::Phenomenon => "phenomenon",
        }
    }

    /// `{{name}}`
    pub fn literal(self) -> String {
        format!("{{{{{}}}}}", self.name())
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, LinkError> {
        let mut segments = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_owned()));
            }
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or(LinkError::UnterminatedPlaceholder(offset + open))?;
            let name = &after[..close];
            let slot = Placeholder::from_name(name)
                .ok_or_else(|| LinkError::UnknownPlaceholder(name.to_owned()))?;
            segments.push(Segment::Slot(slot));
            let consumed = open + 2 + close + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }
        Ok(Self {
            source: source.to_owned(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses(&self, slot: Placeholder) -> bool {
        self.segments.contains(&Segment::Slot(slot))
    }

    pub fn placeholders(&self) -> BTreeSet<Placeholder> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(p) => Some(*p),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Single-pass substitution; substituted values are never re-expanded.
    pub fn render(
        &self,
        mut value: impl FnMut(Placeholder) -> Result<String, LinkError>,
    ) -> Result<String, LinkError> {
        let mut out = String::with_capacity(self.source.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(p) => out.push_str(&value(*p)?),
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for Template {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Template::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhenomenonWeight {
    pub id: String,
    pub p: f64,
}

/// Which role a segment of the teacher completion becomes, and the marker
/// that introduces it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRule {
    pub role: Role,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDef {
    pub id: String,
    pub prompt_template: Template,
    #[serde(default)]
    pub requires_context: bool,
    #[serde(default)]
    pub requires_seed: bool,
    #[serde(default)]
    pub phenomena: Vec<PhenomenonWeight>,
    pub extraction: Vec<ExtractionRule>,
}

/// An instruction appended to a prompt to elicit a linguistic phenomenon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhenomenonDef {
    pub id: String,
    pub instruction: String,
}

pub type PhenomenonRegistry = BTreeMap<String, PhenomenonDef>;

/// The shipped phenomena. Only coreference comes from the original method;
/// the others are extensions.
pub fn builtin_phenomena() -> PhenomenonRegistry {
    [
        (
            "coreference",
            "Refer back to an entity from an earlier turn using a pronoun or other coreferent expression instead of repeating its name.",
        ),
        (
            "ellipsis",
            "Write a short follow-up that omits words recoverable from the previous turn.",
        ),
        (
            "topic_shift",
            "Move the conversation to a different aspect of the context than the previous turn discussed.",
        ),
        (
            "clarification",
            "Ask for clarification of something said in the previous turn.",
        ),
    ]
    .into_iter()
    .map(|(id, instruction)| {
        (
            id.to_owned(),
            PhenomenonDef {
                id: id.to_owned(),
                instruction: instruction.to_owned(),
            },
        )
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub seed_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub context_id: String,
    pub text: String,
}

/// Seed records drawn uniformly with replacement.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedPool {
    records: Vec<SeedRecord>,
}

impl SeedPool {
    pub fn new(records: Vec<SeedRecord>) -> Result<Self, LinkError> {
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.seed_id.as_str()) {
                return Err(LinkError::DuplicateSeed(r.seed_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&SeedRecord> {
        if self.records.is_empty() {
            return None;
        }
        Some(&self.records[below(rng, self.records.len() as u64) as usize])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptProvenance {
    pub link_id: String,
    pub seed_id: Option<String>,
    pub phenomenon_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub text: String,
    pub provenance: PromptProvenance,
}

/// Prefix of the line appended when a sampled phenomenon has no slot in the template.
pub const CONSTRAINT_PREFIX: &str = "Constraint: ";

impl LinkDef {
    /// Structural checks; `registry` resolves phenomenon ids.
    pub fn validate(&self, registry: &PhenomenonRegistry) -> Result<(), LinkError> {
        let invalid = |detail: String| LinkError::InvalidLink {
            link: self.id.clone(),
            detail,
        };
        if self.extraction.is_empty() {
            return Err(invalid("extraction rules are empty".into()));
        }
        let mut markers = BTreeSet::new();
        for rule in &self.extraction {
            if rule.marker.is_empty() {
                return Err(invalid(format!("empty marker for role {}", rule.role)));
            }
            if !markers.insert(rule.marker.as_str()) {
                return Err(invalid(format!("marker {:?} listed twice", rule.marker)));
            }
        }
        let mut total = 0.0;
        for pw in &self.phenomena {
            if !registry.contains_key(&pw.id) {
                return Err(LinkError::UnknownPhenomenon(pw.id.clone()));
            }
            if !pw.p.is_finite() || pw.p < 0.0 {
                return Err(invalid(format!("phenomenon {} has probability {}", pw.id, pw.p)));
            }
            total += pw.p;
        }
        if total > 1.0 + crate::graph::SUM_TOLERANCE {
            return Err(invalid(format!("phenomenon probabilities sum to {total} > 1")));
        }
        Ok(())
    }

    /// Builds the teacher prompt for one step.
    ///
    /// `history` is rendered with the tagged conversation format. An absent
    /// phenomenon renders as the empty string. A present phenomenon whose
    /// template has no `{{phenomenon}}` slot is appended as a final
    /// `Constraint: ` line.
    pub fn instantiate(
        &self,
        history: &Conversation,
        context: Option<&str>,
        seed: Option<&SeedRecord>,
        phenomenon: Option<&PhenomenonDef>,
    ) -> Result<PromptInstance, LinkError> {
        if self.requires_context && context.is_none() {
            return Err(LinkError::MissingContext(self.id.clone()));
        }
        if self.requires_seed && seed.is_none() {
            return Err(LinkError::MissingSeed(self.id.clone()));
        }
        let template = &self.prompt_template;
        let history_text = if template.uses(Placeholder::History) {
            serialize(history)?
        } else {
            String::new()
        };
        let unresolved = |p: Placeholder| LinkError::UnresolvedPlaceholder(p.name().to_owned());
        let mut text = template.render(|slot| match slot {
            Placeholder::Context => context.map(str::to_owned).ok_or_else(|| unresolved(slot)),
            Placeholder::History => Ok(history_text.clone()),
            Placeholder::Seed => seed.map(|s| s.text.clone()).ok_or_else(|| unresolved(slot)),
            Placeholder::Phenomenon => Ok(phenomenon.map(|p| p.instruction.clone()).unwrap_or_default()),
        })?;
        if let Some(p) = phenomenon {
            if !template.uses(Placeholder::Phenomenon) {
                text.push('\n');
                text.push_str(CONSTRAINT_PREFIX);
                text.push_str(&p.instruction);
            }
        }
        Ok(PromptInstance {
            text,
            provenance: PromptProvenance {
                link_id: self.id.clone(),
                seed_id: seed.map(|s| s.seed_id.clone()),
                phenomenon_id: phenomenon.map(|p| p.id.clone()),
            },
        })
    }

    /// Draws phenomenon `i` with probability `p_i`, or none with the remaining mass.
    pub fn sample_phenomenon<'r, R: Rng + ?Sized>(
        &self,
        registry: &'r PhenomenonRegistry,
        rng: &mut R,
    ) -> Result<Option<&'r PhenomenonDef>, LinkError> {
        if self.phenomena.is_empty() {
            return Ok(None);
        }
        let u = unit_f64(rng);
        match invert_cumulative(self.phenomena.iter().map(|p| p.p), u) {
            None => Ok(None),
            Some(i) => {
                let id = &self.phenomena[i].id;
                registry
                    .get(id)
                    .map(Some)
                    .ok_or_else(|| LinkError::UnknownPhenomenon(id.clone()))
            }
        }
    }
}
