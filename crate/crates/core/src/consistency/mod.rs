//! Inconsistency detection between a mapping and the two graphs, and the
//! human-in-the-loop alignment cycle built on it.
//!
//! Three disagreement kinds are detected:
//! - `Collision`: several source nodes map to the same target node;
//! - `UnmatchedTarget`: a target node has no preimage;
//! - `EdgeViolation`: a source edge whose endpoints map to distinct,
//!   non-adjacent target nodes.

pub mod checkpoint;
mod locate;
mod session;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AlignmentGraph;
use crate::matcher::{Mapping, MatchError};

pub use locate::{infer_hidden_location, HiddenLocation};
pub use session::{
    resolve, run_alignment_loop, AlignmentSession, EditProvider, LoopOutcome, Resolution, Resolved, RoundContext,
    RoundRecord, DEFAULT_MAX_ROUNDS,
};

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("mapping has no entry for source node `{0}`")]
    MappingNotTotal(String),
    #[error("mapping references unknown {graph} node `{id}`")]
    DanglingId { graph: &'static str, id: String },
    #[error("cannot localize `{0}`: some neighbours have no preimage")]
    NeighborsUnmatched(String),
    #[error("no scene primitive with id `{0}`")]
    UnknownPrimitive(String),
    #[error("unknown target node `{0}`")]
    UnknownTarget(String),
    #[error("unknown inconsistency `{0}`")]
    UnknownInconsistency(String),
    #[error("alignment did not converge within {0} rounds")]
    MaxRoundsExceeded(usize),
    #[error("edit rejected on {graph} graph: {source}")]
    Edit {
        graph: &'static str,
        #[source]
        source: crate::graph::GraphError,
    },
    #[error("pinned pair references unknown node `{0}`")]
    UnknownPin(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconsistencyKind {
    Collision,
    UnmatchedTarget,
    EdgeViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    Resolved,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Collision { target: String, sources: Vec<String> },
    UnmatchedTarget { target: String },
    EdgeViolation { source_edge: [String; 2], target_pair: [String; 2] },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inconsistency {
    /// Stable key, also used to accept the record.
    pub id: String,
    pub kind: InconsistencyKind,
    pub payload: Payload,
    pub status: Status,
}

impl Inconsistency {
    fn new(kind: InconsistencyKind, payload: Payload, accepted: &BTreeSet<String>) -> Self {
        let id = match &payload {
            Payload::Collision { target, .. } => format!("collision:{target}"),
            Payload::UnmatchedTarget { target } => format!("unmatched_target:{target}"),
            Payload::EdgeViolation { source_edge: [a, b], .. } => format!("edge_violation:{a}|{b}"),
        };
        let status = if accepted.contains(&id) { Status::Accepted } else { Status::Open };
        Self { id, kind, payload, status }
    }

    pub fn is_open(&self) -> bool {
        self.status == Status::Open
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub round: usize,
    pub items: Vec<Inconsistency>,
}

impl InconsistencyReport {
    pub fn open_count(&self) -> usize {
        self.items.iter().filter(|i| i.is_open()).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Checks that the mapping is total on the source graph and only names
/// live nodes.
pub fn validate_mapping(m: &Mapping, s: &AlignmentGraph, f: &AlignmentGraph) -> Result<(), ConsistencyError> {
    for p in &m.pairs {
        if !s.contains(&p.source) {
            return Err(ConsistencyError::DanglingId { graph: "source", id: p.source.clone() });
        }
        if !f.contains(&p.target) {
            return Err(ConsistencyError::DanglingId { graph: "target", id: p.target.clone() });
        }
    }
    let assign = m.assign();
    if let Some(missing) = s.nodes().iter().find(|n| !assign.contains_key(n.id.as_str())) {
        return Err(ConsistencyError::MappingNotTotal(missing.id.clone()));
    }
    Ok(())
}

/// Detects all inconsistencies, ordered by kind and then by ids. Records
/// whose id is in `accepted` carry status `Accepted`.
///
/// An accepted unmatched target `t` stands for an object present only in
/// the target graph; a source edge mapped onto two neighbours of `t` is
/// then treated as preserved through `t`.
pub fn get_inconsistencies(
    m: &Mapping,
    s: &AlignmentGraph,
    f: &AlignmentGraph,
    accepted: &BTreeSet<String>,
) -> Vec<Inconsistency> {
    let assign = m.assign();
    let mut preimages: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (src, tgt) in &assign {
        preimages.entry(tgt).or_default().push(src);
    }

    let mut out = Vec::new();
    for (tgt, sources) in &preimages {
        if sources.len() >= 2 {
            out.push(Inconsistency::new(
                InconsistencyKind::Collision,
                Payload::Collision {
                    target: tgt.to_string(),
                    sources: sources.iter().map(|s| s.to_string()).collect(),
                },
                accepted,
            ));
        }
    }

    let unmatched: Vec<&str> = f.sorted_ids().into_iter().filter(|id| !preimages.contains_key(id)).collect();
    for tgt in &unmatched {
        out.push(Inconsistency::new(
            InconsistencyKind::UnmatchedTarget,
            Payload::UnmatchedTarget { target: tgt.to_string() },
            accepted,
        ));
    }

    let f_adj = f.adjacency();
    let bridges: Vec<&BTreeSet<&str>> =
        unmatched.iter().filter(|t| accepted.contains(&format!("unmatched_target:{t}"))).map(|t| &f_adj[t]).collect();
    for e in s.edges() {
        let (a, b) = e.endpoints();
        let (Some(&fa), Some(&fb)) = (assign.get(a), assign.get(b)) else {
            continue;
        };
        if fa == fb || f.has_edge(fa, fb) {
            continue;
        }
        if bridges.iter().any(|nb| nb.contains(fa) && nb.contains(fb)) {
            continue;
        }
        out.push(Inconsistency::new(
            InconsistencyKind::EdgeViolation,
            Payload::EdgeViolation {
                source_edge: [a.to_owned(), b.to_owned()],
                target_pair: [fa.to_owned(), fb.to_owned()],
            },
            accepted,
        ));
    }
    out
}
