//! The shared JSON config document: graph, length distribution, links,
//! phenomena, teacher settings and synthesis policy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{Role, DEFAULT_CONTEXT_ROLE};
use crate::graph::{ConversationGraph, Edge, GraphError, LengthSpec, ValidGraph, DEFAULT_START};
use crate::link::{builtin_phenomena, LinkDef, LinkError, PhenomenonDef, PhenomenonRegistry};
use crate::teacher::TeacherConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("vertex {0} has no link definition")]
    MissingLink(String),
    #[error("link {0} is defined twice")]
    DuplicateLink(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisPolicy {
    /// Extra attempts per turn after a teacher or extraction failure.
    pub per_turn_retries: u32,
    /// Attempt budget; defaults to twice the requested count.
    pub max_attempts: Option<u64>,
    /// Drop conversations whose (context id, first extracted turn) was already produced.
    pub dedup: bool,
}

impl Default for SynthesisPolicy {
    fn default() -> Self {
        Self {
            per_turn_retries: 1,
            max_attempts: None,
            dedup: false,
        }
    }
}

fn default_start() -> String {
    DEFAULT_START.to_owned()
}

fn default_length() -> LengthSpec {
    LengthSpec::Fixed { n: 4 }
}

fn default_context_role() -> Role {
    Role::new(DEFAULT_CONTEXT_ROLE).expect("valid default role")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_start")]
    pub start: String,
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(default = "default_length")]
    pub length: LengthSpec,
    #[serde(default)]
    pub links: Vec<LinkDef>,
    /// Added to (or replacing by id) the built-in phenomena.
    #[serde(default)]
    pub phenomena: Vec<PhenomenonDef>,
    #[serde(default = "default_context_role")]
    pub context_role: Role,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub synthesis: SynthesisPolicy,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads and parses `path`, renormalizing small weight drift. Returns the
    /// config and any renormalization warnings.
    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|detail| ConfigError::Parse {
            path: path.to_owned(),
            detail,
        })?;
        let mut graph = config.graph();
        let warnings = graph.renormalize();
        config.edges = graph.edges;
        Ok((config, warnings))
    }

    pub fn graph(&self) -> ConversationGraph {
        ConversationGraph {
            start: self.start.clone(),
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn phenomenon_registry(&self) -> PhenomenonRegistry {
        let mut registry = builtin_phenomena();
        for p in &self.phenomena {
            registry.insert(p.id.clone(), p.clone());
        }
        registry
    }

    /// Everything needed to synthesize: a valid graph, a valid length
    /// distribution, and a validated link for every vertex.
    pub fn blueprint(&self) -> Result<Blueprint, ConfigError> {
        let graph = self.graph().into_valid()?;
        self.length.validate()?;
        let phenomena = self.phenomenon_registry();
        for p in phenomena.values() {
            if p.instruction.trim().is_empty() {
                return Err(LinkError::EmptyInstruction(p.id.clone()).into());
            }
        }
        let mut links = BTreeMap::new();
        for link in &self.links {
            link.validate(&phenomena)?;
            if link.extraction.iter().any(|r| r.role == self.context_role) {
                return Err(ConfigError::Invalid(format!(
                    "link {} extracts into the context role {}",
                    link.id, self.context_role
                )));
            }
            if links.insert(link.id.clone(), link.clone()).is_some() {
                return Err(ConfigError::DuplicateLink(link.id.clone()));
            }
        }
        for v in &self.vertices {
            if !links.contains_key(v) {
                return Err(ConfigError::MissingLink(v.clone()));
            }
        }
        Ok(Blueprint {
            graph,
            length: self.length.clone(),
            links,
            phenomena,
            context_role: self.context_role.clone(),
        })
    }
}

/// Validated synthesis inputs derived from a [`ConfigFile`].
#[derive(Debug, Clone)]
pub struct Blueprint {
    pub graph: ValidGraph,
    pub length: LengthSpec,
    pub links: BTreeMap<String, LinkDef>,
    pub phenomena: PhenomenonRegistry,
    pub context_role: Role,
}
