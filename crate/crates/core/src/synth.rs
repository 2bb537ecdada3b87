//! Dataset synthesis: sample a chain, execute its links against the teacher
//! one turn at a time, and stream accepted conversations to disk.
//!
//! Every conversation index gets its own RNG seed derived from the master
//! seed, so record content never depends on worker scheduling. Results are
//! committed in index order, which also makes the output file order stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Blueprint, SynthesisPolicy};
use crate::conversation::{parse, serialize, Conversation, Provenance, Role, Turn};
use crate::eval::normalize;
use crate::graph::ValidGraph;
use crate::jsonl::{write_atomic, AtomicFile, JsonlError};
use crate::link::{ContextRecord, ExtractionRule, LinkError, Placeholder, SeedPool};
use crate::rng::{derive_seed, seeded};
use crate::teacher::{CompletionModel, GenerationRequest, TeacherError};

/// Value of the `schema` field on every dataset record and manifest.
pub const SCHEMA: &str = "codi/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("marker {marker:?} for role {role} not found")]
    MarkerMissing { role: String, marker: String },
    #[error("extracted text for role {0} is empty")]
    EmptyExtraction(String),
}

/// Splits a teacher completion into role turns.
///
/// For each rule, the segment starts after the last occurrence of its marker
/// and runs to the next occurrence of any listed marker (or the end). Text
/// before the first marker, such as a reasoning trace, is dropped.
pub fn extract_turns(raw: &str, rules: &[ExtractionRule]) -> Result<Vec<Turn>, ExtractError> {
    let mut turns = Vec::with_capacity(rules.len());
    for rule in rules {
        let at = raw
            .rfind(&rule.marker)
            .ok_or_else(|| ExtractError::MarkerMissing {
                role: rule.role.to_string(),
                marker: rule.marker.clone(),
            })?;
        let start = at + rule.marker.len();
        let end = rules
            .iter()
            .filter_map(|r| raw[start..].find(&r.marker).map(|i| start + i))
            .min()
            .unwrap_or(raw.len());
        let text = raw[start..end].trim();
        if text.is_empty() {
            return Err(ExtractError::EmptyExtraction(rule.role.to_string()));
        }
        turns.push(Turn::new(rule.role.clone(), text));
    }
    Ok(turns)
}

/// Why a conversation was discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Teacher(TeacherError),
    Extraction(ExtractError),
    DuplicateTurn { role: String },
    TagCollision(String),
    Prompt(String),
    RoundTrip,
    CrossDuplicate,
}

impl Rejection {
    /// Stable reason key used in manifests.
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::Teacher(e) => e.reason(),
            Rejection::Extraction(ExtractError::MarkerMissing { .. }) => "MarkerMissing",
            Rejection::Extraction(ExtractError::EmptyExtraction(_)) => "EmptyExtraction",
            Rejection::DuplicateTurn { .. } => "DuplicateTurn",
            Rejection::TagCollision(_) => "TagCollision",
            Rejection::Prompt(_) => "Prompt",
            Rejection::RoundTrip => "RoundTrip",
            Rejection::CrossDuplicate => "CrossDuplicate",
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("teacher unavailable: {0}")]
    Fatal(TeacherError),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherMeta {
    pub model: String,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub schema: String,
    pub conversation_id: String,
    pub conversation_index: u64,
    pub context_id: String,
    pub chain: Vec<String>,
    pub conversation: Conversation,
    pub teacher_meta: TeacherMeta,
    pub rng_seed: u64,
    pub graph_hash: String,
}

impl DatasetRecord {
    /// Structural checks that do not need the producing config.
    pub fn check(&self, context_role: &Role) -> Result<(), String> {
        if self.schema != SCHEMA {
            return Err(format!("schema {:?}, expected {SCHEMA:?}", self.schema));
        }
        if self.chain.is_empty() {
            return Err("empty chain".into());
        }
        self.conversation
            .check_context(context_role)
            .map_err(|e| e.to_string())?;
        let chain: BTreeSet<&str> = self.chain.iter().map(String::as_str).collect();
        let mut generated = 0;
        for (i, turn) in self.conversation.turns.iter().enumerate() {
            if &turn.role == context_role {
                continue;
            }
            generated += 1;
            match &turn.provenance {
                Some(p) if chain.contains(p.link_id.as_str()) => {}
                Some(p) => return Err(format!("turn {i} cites link {} outside the chain", p.link_id)),
                None => return Err(format!("turn {i} has no provenance")),
            }
        }
        if generated < self.chain.len() {
            return Err(format!(
                "{} link executions but only {generated} generated turns",
                self.chain.len()
            ));
        }
        let text = serialize(&self.conversation).map_err(|e| e.to_string())?;
        let back = parse(&text).map_err(|e| e.to_string())?;
        if !back.same_turns(&self.conversation) {
            return Err("conversation does not round-trip".into());
        }
        Ok(())
    }

    /// [`Self::check`] plus edge validity of the chain against `graph`.
    pub fn check_against(&self, graph: &ValidGraph, context_role: &Role) -> Result<(), String> {
        self.check(context_role)?;
        if self.graph_hash != graph.hash() {
            return Err("graph hash differs from the config graph".into());
        }
        if !graph.is_valid_chain(&self.chain) {
            return Err(format!("chain {:?} is not a walk of the graph", self.chain));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisManifest {
    pub schema: String,
    pub requested: u64,
    pub produced: u64,
    pub attempted: u64,
    pub rejections: BTreeMap<String, u64>,
    pub teacher_calls: u64,
    pub wall_clock_secs: f64,
    pub budget_exhausted: bool,
    pub master_seed: u64,
    pub model: String,
    pub graph_hash: String,
}

impl SynthesisManifest {
    pub fn accounting_holds(&self) -> bool {
        self.produced + self.rejections.values().sum::<u64>() == self.attempted
    }
}

pub struct SynthesisJob<'a> {
    pub blueprint: Blueprint,
    pub seeds: SeedPool,
    pub contexts: Vec<ContextRecord>,
    pub model: &'a dyn CompletionModel,
    pub target: u64,
    pub master_seed: u64,
    pub policy: SynthesisPolicy,
    pub workers: usize,
}

/// Result of one conversation attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub outcome: Result<DatasetRecord, Rejection>,
    pub teacher_calls: u64,
}

impl SynthesisJob<'_> {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidJob(m));
        if self.target == 0 {
            return bad("target conversation count must be ≥ 1".into());
        }
        if self.contexts.is_empty() {
            return bad("no contexts given".into());
        }
        if self.workers == 0 {
            return bad("worker count must be ≥ 1".into());
        }
        for link in self.blueprint.links.values() {
            let wants_seed = link.requires_seed || link.prompt_template.uses(Placeholder::Seed);
            if wants_seed && self.seeds.is_empty() {
                return bad(format!("link {} needs seed data but the seed pool is empty", link.id));
            }
        }
        if self.max_attempts() < self.target {
            return bad("max_attempts is below the target count".into());
        }
        Ok(())
    }

    pub fn max_attempts(&self) -> u64 {
        self.policy
            .max_attempts
            .unwrap_or_else(|| self.target.saturating_mul(2))
    }

    pub fn conversation_seed(&self, index: u64) -> u64 {
        derive_seed(self.master_seed, index)
    }

    pub fn context_for(&self, index: u64) -> &ContextRecord {
        &self.contexts[(index % self.contexts.len() as u64) as usize]
    }

    /// Synthesizes conversation `index` against `context`.
    ///
    /// Returns `Err` only for fatal teacher errors (unreachable endpoint),
    /// which abort the whole run.
    pub fn synthesize_conversation(
        &self,
        context: &ContextRecord,
        index: u64,
    ) -> Result<Attempt, SynthError> {
        let bp = &self.blueprint;
        let seed = self.conversation_seed(index);
        let mut rng = seeded(seed);
        let n = bp.length.sample(&mut rng);
        let chain = bp
            .graph
            .walk(n, &mut rng)
            .map_err(|e| SynthError::InvalidJob(e.to_string()))?;

        let mut calls = 0;
        let reject = |r: Rejection, calls| -> Result<Attempt, SynthError> {
            Ok(Attempt { outcome: Err(r), teacher_calls: calls })
        };

        let mut conversation = Conversation::new(
            format!("conv-{index:08}"),
            vec![Turn::new(bp.context_role.clone(), &context.text)],
        );
        let mut completion_tokens = 0;
        for (step, link_id) in chain.iter().enumerate() {
            let link = &bp.links[link_id];
            let phenomenon = link
                .sample_phenomenon(&bp.phenomena, &mut rng)
                .map_err(|e| SynthError::InvalidJob(e.to_string()))?;
            let seed_record = if link.requires_seed || link.prompt_template.uses(Placeholder::Seed) {
                self.seeds.sample(&mut rng)
            } else {
                None
            };
            let history = Conversation::new(conversation.id.clone(), conversation.turns[1..].to_vec());
            let prompt = match link.instantiate(&history, Some(&context.text), seed_record, phenomenon) {
                Ok(p) => p,
                Err(LinkError::Format(e)) => return reject(Rejection::TagCollision(e.to_string()), calls),
                Err(e) => return reject(Rejection::Prompt(e.to_string()), calls),
            };
            let request = GenerationRequest {
                prompt: &prompt.text,
                link_id,
                turn_index: step,
                conversation_index: index,
            };

            let mut last = None;
            for _ in 0..=self.policy.per_turn_retries {
                calls += 1;
                let response = match self.model.generate(&request) {
                    Ok(r) => r,
                    Err(e) if e.is_fatal() => return Err(SynthError::Fatal(e)),
                    Err(e) => {
                        last = Some(Rejection::Teacher(e));
                        continue;
                    }
                };
                let mut turns = match extract_turns(&response.text, &link.extraction) {
                    Ok(t) => t,
                    Err(e) => {
                        last = Some(Rejection::Extraction(e));
                        continue;
                    }
                };
                for turn in &mut turns {
                    turn.provenance = Some(Provenance {
                        link_id: link_id.clone(),
                        seed_id: prompt.provenance.seed_id.clone(),
                        phenomenon_id: prompt.provenance.phenomenon_id.clone(),
                        teacher_raw_length: response.text.len(),
                    });
                }
                if let Some(role) = duplicate_role(&conversation.turns[1..], &turns) {
                    last = Some(Rejection::DuplicateTurn { role });
                    continue;
                }
                let mut candidate = conversation.clone();
                candidate.turns.extend(turns);
                if let Err(e) = candidate.check_tags() {
                    last = Some(Rejection::TagCollision(e.to_string()));
                    continue;
                }
                conversation = candidate;
                completion_tokens += response.usage.completion_tokens;
                last = None;
                break;
            }
            if let Some(rejection) = last {
                return reject(rejection, calls);
            }
        }

        let round_trips = serialize(&conversation)
            .ok()
            .and_then(|text| parse(&text).ok())
            .is_some_and(|back| back.same_turns(&conversation));
        if !round_trips {
            return reject(Rejection::RoundTrip, calls);
        }
        Ok(Attempt {
            outcome: Ok(DatasetRecord {
                schema: SCHEMA.to_owned(),
                conversation_id: conversation.id.clone(),
                conversation_index: index,
                context_id: context.context_id.clone(),
                chain,
                conversation,
                teacher_meta: TeacherMeta {
                    model: self.model.model_id().to_owned(),
                    completion_tokens,
                },
                rng_seed: seed,
                graph_hash: bp.graph.hash().to_owned(),
            }),
            teacher_calls: calls,
        })
    }

    /// Runs the job, handing accepted records to `sink` in index order.
    pub fn run(
        &self,
        mut sink: impl FnMut(&DatasetRecord) -> Result<(), SynthError>,
    ) -> Result<SynthesisManifest, SynthError> {
        self.validate()?;
        let started = Instant::now();
        let max_attempts = self.max_attempts();
        let next_index = AtomicU64::new(0);
        let stop = AtomicBool::new(false);

        let mut manifest = SynthesisManifest {
            schema: SCHEMA.to_owned(),
            requested: self.target,
            produced: 0,
            attempted: 0,
            rejections: BTreeMap::new(),
            teacher_calls: 0,
            wall_clock_secs: 0.0,
            budget_exhausted: false,
            master_seed: self.master_seed,
            model: self.model.model_id().to_owned(),
            graph_hash: self.blueprint.graph.hash().to_owned(),
        };

        let result = std::thread::scope(|scope| -> Result<(), SynthError> {
            let (tx, rx) = mpsc::channel::<(u64, Result<Attempt, SynthError>)>();
            for _ in 0..self.workers {
                let tx = tx.clone();
                let (next_index, stop) = (&next_index, &stop);
                scope.spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        let i = next_index.fetch_add(1, Ordering::AcqRel);
                        if i >= max_attempts {
                            break;
                        }
                        let attempt = self.synthesize_conversation(self.context_for(i), i);
                        if tx.send((i, attempt)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);

            let mut pending: BTreeMap<u64, Attempt> = BTreeMap::new();
            let mut seen_openings: HashSet<(String, String)> = HashSet::new();
            let outcome = (|| {
                for (i, attempt) in rx.iter() {
                    pending.insert(i, attempt?);
                    while let Some(attempt) = pending.remove(&manifest.attempted) {
                        manifest.attempted += 1;
                        manifest.teacher_calls += attempt.teacher_calls;
                        let accepted = attempt.outcome.and_then(|record| {
                            if self.policy.dedup && !seen_openings.insert(opening_key(&record)) {
                                Err(Rejection::CrossDuplicate)
                            } else {
                                Ok(record)
                            }
                        });
                        match accepted {
                            Ok(record) => {
                                sink(&record)?;
                                manifest.produced += 1;
                            }
                            Err(r) => *manifest.rejections.entry(r.reason().to_owned()).or_default() += 1,
                        }
                        if manifest.produced == self.target || manifest.attempted == max_attempts {
                            return Ok(());
                        }
                    }
                }
                Ok(())
            })();
            stop.store(true, Ordering::Release);
            outcome
        });
        result?;
        manifest.budget_exhausted = manifest.produced < self.target;
        manifest.wall_clock_secs = started.elapsed().as_secs_f64();
        debug_assert!(manifest.accounting_holds());
        Ok(manifest)
    }
}

fn opening_key(record: &DatasetRecord) -> (String, String) {
    let first = record
        .conversation
        .turns
        .iter()
        .find(|t| t.provenance.is_some())
        .map(|t| t.text.clone())
        .unwrap_or_default();
    (record.context_id.clone(), first)
}

/// Role of the first new turn whose normalized text repeats an earlier turn
/// (or another new turn) of the same role.
fn duplicate_role(existing: &[Turn], new: &[Turn]) -> Option<String> {
    let mut seen: HashSet<(&Role, Vec<String>)> = existing
        .iter()
        .map(|t| (&t.role, normalize(&t.text)))
        .collect();
    new.iter()
        .find(|t| !seen.insert((&t.role, normalize(&t.text))))
        .map(|t| t.role.to_string())
}

/// Sidecar manifest path for a dataset at `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Runs `job`, streaming records to `out` and writing the manifest beside it.
/// Both files appear only once the run finishes.
pub fn synthesize_dataset(job: &SynthesisJob<'_>, out: &Path) -> Result<SynthesisManifest, SynthError> {
    let mut file = AtomicFile::create(out)?;
    let manifest = job.run(|record| file.write_line(record).map_err(SynthError::from))?;
    file.commit()?;
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&manifest_path(out), &json)?;
    Ok(manifest)
}
