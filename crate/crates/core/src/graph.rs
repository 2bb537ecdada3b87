//! Weighted conversational graphs and chain sampling.
//!
//! Vertices are conversation link ids plus a distinguished start vertex.
//! Edge weights are transition probabilities. A chain of length `n` is drawn by
//! walking from the start vertex and emitting the first `n` links visited.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand_core::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, invert_cumulative, unit_f64};

/// Outgoing weights must sum to 1 within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Sums off by at most this much are renormalized at load with a warning.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_START: &str = "START";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub w: f64,
}

/// Graph definition as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationGraph {
    #[serde(default = "default_start")]
    pub start: String,
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
}

fn default_start() -> String {
    DEFAULT_START.to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum FindingKind {
    BadWeight,
    SumNotOne,
    DeadEnd,
    Unreachable,
    StartHasIncoming,
    UnknownVertex,
    DuplicateVertex,
    DuplicateEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub vertex: Option<String>,
    pub edge: Option<(String, String)>,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(v) = &self.vertex {
            write!(f, " vertex={v}")?;
        }
        if let Some((a, b)) = &self.edge {
            write!(f, " edge={a}->{b}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    fn push(&mut self, kind: FindingKind, vertex: Option<&str>, edge: Option<(&str, &str)>, detail: String) {
        self.findings.push(Finding {
            kind,
            vertex: vertex.map(str::to_owned),
            edge: edge.map(|(a, b)| (a.to_owned(), b.to_owned())),
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "graph valid: 0 findings");
        }
        writeln!(f, "graph invalid: {} finding(s)", self.findings.len())?;
        for finding in &self.findings {
            writeln!(f, "  {finding}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("invalid graph:\n{0}")]
    InvalidGraph(ValidationReport),
    #[error("chain length must be at least 1")]
    ZeroLength,
    #[error("invalid length spec: {0}")]
    InvalidLength(String),
}

impl ConversationGraph {
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut known: BTreeSet<&str> = BTreeSet::new();
        known.insert(&self.start);
        for v in &self.vertices {
            if v.is_empty() || !known.insert(v) {
                report.push(
                    FindingKind::DuplicateVertex,
                    Some(v),
                    None,
                    "vertex id is empty or declared twice (or equals the start id)".into(),
                );
            }
        }

        let mut seen_edges = BTreeSet::new();
        let mut outgoing: BTreeMap<&str, Vec<&Edge>> = BTreeMap::new();
        for e in &self.edges {
            let pair = (e.from.as_str(), e.to.as_str());
            for end in [&e.from, &e.to] {
                if !known.contains(end.as_str()) {
                    report.push(
                        FindingKind::UnknownVertex,
                        Some(end),
                        Some(pair),
                        "edge endpoint is not a declared vertex".into(),
                    );
                }
            }
            if e.to == self.start {
                report.push(
                    FindingKind::StartHasIncoming,
                    Some(&self.start),
                    Some(pair),
                    "the start vertex cannot be re-entered".into(),
                );
            }
            if !(e.w.is_finite() && e.w > 0.0 && e.w <= 1.0) {
                report.push(
                    FindingKind::BadWeight,
                    None,
                    Some(pair),
                    format!("weight {} outside (0, 1]", e.w),
                );
            }
            if !seen_edges.insert(pair) {
                report.push(
                    FindingKind::DuplicateEdge,
                    None,
                    Some(pair),
                    "edge declared more than once".into(),
                );
            }
            outgoing.entry(&e.from).or_default().push(e);
        }

        for v in std::iter::once(&self.start).chain(&self.vertices) {
            match outgoing.get(v.as_str()) {
                None => report.push(
                    FindingKind::DeadEnd,
                    Some(v),
                    None,
                    "vertex has no outgoing edges".into(),
                ),
                Some(edges) => {
                    let sum: f64 = edges.iter().map(|e| e.w).sum();
                    if (sum - 1.0).abs() > SUM_TOLERANCE {
                        report.push(
                            FindingKind::SumNotOne,
                            Some(v),
                            None,
                            format!("outgoing weights sum to {sum}"),
                        );
                    }
                }
            }
        }

        let mut reached: BTreeSet<&str> = BTreeSet::from([self.start.as_str()]);
        let mut queue = VecDeque::from([self.start.as_str()]);
        while let Some(v) = queue.pop_front() {
            for e in outgoing.get(v).into_iter().flatten() {
                if reached.insert(&e.to) {
                    queue.push_back(&e.to);
                }
            }
        }
        for v in &self.vertices {
            if !reached.contains(v.as_str()) {
                report.push(
                    FindingKind::Unreachable,
                    Some(v),
                    None,
                    "vertex is not reachable from start".into(),
                );
            }
        }
        report
    }

    /// Rescales outgoing weights of vertices whose sum is off by more than
    /// [`SUM_TOLERANCE`] but at most [`RENORMALIZE_TOLERANCE`]. Returns one
    /// warning per rescaled vertex.
    pub fn renormalize(&mut self) -> Vec<String> {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for e in &self.edges {
            *sums.entry(e.from.clone()).or_default() += e.w;
        }
        let mut warnings = Vec::new();
        for (vertex, sum) in sums {
            let off = (sum - 1.0).abs();
            if off > SUM_TOLERANCE && off <= RENORMALIZE_TOLERANCE {
                for e in self.edges.iter_mut().filter(|e| e.from == vertex) {
                    e.w /= sum;
                }
                warnings.push(format!(
                    "outgoing weights of {vertex} summed to {sum}; renormalized to 1"
                ));
            }
        }
        warnings
    }

    /// Validates and freezes the graph for sampling.
    pub fn into_valid(self) -> Result<ValidGraph, GraphError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(GraphError::InvalidGraph(report));
        }
        let hash = self.digest();
        let mut successors: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for e in &self.edges {
            successors
                .entry(e.from.clone())
                .or_default()
                .push((e.to.clone(), e.w));
        }
        for succ in successors.values_mut() {
            succ.sort_by(|a, b| a.0.cmp(&b.0));
        }
        Ok(ValidGraph {
            def: self,
            successors,
            hash,
        })
    }

    /// SHA-256 over a canonical JSON encoding (vertices and edges sorted).
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.vertices.sort();
        canon
            .edges
            .sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        let bytes = serde_json::to_vec(&canon).expect("graph serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A graph that passed validation. Immutable.
#[derive(Debug, Clone)]
pub struct ValidGraph {
    def: ConversationGraph,
    successors: BTreeMap<String, Vec<(String, f64)>>,
    hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSample {
    pub links: Vec<String>,
    pub rng_seed: u64,
    pub graph_hash: String,
}

impl ValidGraph {
    pub fn definition(&self) -> &ConversationGraph {
        &self.def
    }

    pub fn start(&self) -> &str {
        &self.def.start
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Successors of `vertex` ordered by target id.
    pub fn successors(&self, vertex: &str) -> &[(String, f64)] {
        self.successors.get(vertex).map_or(&[], Vec::as_slice)
    }

    pub fn is_edge(&self, from: &str, to: &str) -> bool {
        self.successors(from).iter().any(|(t, _)| t == to)
    }

    /// True if `links` is a walk from the start vertex.
    pub fn is_valid_chain(&self, links: &[String]) -> bool {
        let mut prev = self.start();
        for link in links {
            if !self.is_edge(prev, link) {
                return false;
            }
            prev = link;
        }
        true
    }

    /// One transition from `vertex` by cumulative-weight inversion.
    pub fn step<R: Rng + ?Sized>(&self, vertex: &str, rng: &mut R) -> &str {
        let succ = self.successors(vertex);
        let u = unit_f64(rng);
        // Weights sum to 1 within tolerance; a draw past the total lands on the last successor.
        let i = invert_cumulative(succ.iter().map(|s| s.1), u).unwrap_or(succ.len() - 1);
        &succ[i].0
    }

    pub fn walk<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<String>, GraphError> {
        if n == 0 {
            return Err(GraphError::ZeroLength);
        }
        let mut links = Vec::with_capacity(n);
        let mut at = self.start();
        for _ in 0..n {
            at = self.step(at, rng);
            links.push(at.to_owned());
        }
        Ok(links)
    }

    pub fn sample_chain(&self, n: usize, seed: u64) -> Result<ChainSample, GraphError> {
        let mut rng = rng::seeded(seed);
        Ok(ChainSample {
            links: self.walk(n, &mut rng)?,
            rng_seed: seed,
            graph_hash: self.hash.clone(),
        })
    }
}

/// Validates `graph` and samples one chain.
pub fn sample_chain(graph: &ConversationGraph, n: usize, seed: u64) -> Result<ChainSample, GraphError> {
    graph.clone().into_valid()?.sample_chain(n, seed)
}

/// Distribution of conversation lengths (number of links per chain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthSpec {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    Histogram { bins: Vec<(usize, f64)> },
}

impl LengthSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::InvalidLength(msg));
        match self {
            LengthSpec::Fixed { n } if *n == 0 => bad("fixed length must be ≥ 1".into()),
            LengthSpec::Uniform { min, max } if *min == 0 || min > max => {
                bad(format!("uniform bounds [{min}, {max}] must satisfy 1 ≤ min ≤ max"))
            }
            LengthSpec::Histogram { bins } => {
                if bins.is_empty() {
                    return bad("histogram has no bins".into());
                }
                if let Some((n, p)) = bins
                    .iter()
                    .find(|(n, p)| *n == 0 || !p.is_finite() || *p < 0.0)
                {
                    return bad(format!("histogram bin ({n}, {p}) invalid"));
                }
                let total: f64 = bins.iter().map(|b| b.1).sum();
                if (total - 1.0).abs() > SUM_TOLERANCE {
                    return bad(format!("histogram probabilities sum to {total}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            LengthSpec::Fixed { n } => *n,
            LengthSpec::Uniform { min, max } => {
                min + rng::below(rng, (max - min + 1) as u64) as usize
            }
            LengthSpec::Histogram { bins } => {
                let u = unit_f64(rng);
                let i = invert_cumulative(bins.iter().map(|b| b.1), u).unwrap_or(bins.len() - 1);
                bins[i].0
            }
        }
    }
}
