//! Functional graph ingestion from a digitized P&ID.
//!
//! In the raw diagram every equipment symbol and every pipe segment or
//! junction is a node; lines between symbols are edges. Normalization runs
//! the same simplification passes as the scene builder.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AlignmentGraph, NodeAttribute, Provenance};
use crate::vocab::{normalize_label, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FunctionalError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not equipment")]
    NotEquipment(String),
    #[error("cannot remove `{id}`: degree {degree} is ambiguous to splice")]
    DegreeTooHigh { id: String, degree: usize },
    #[error("malformed P&ID: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawKind {
    #[serde(rename = "equipment")]
    Equipment,
    #[serde(rename = "pipe-junction")]
    PipeJunction,
    #[serde(rename = "pipe-run")]
    PipeRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNode {
    pub id: String,
    pub kind: RawKind,
    #[serde(default)]
    pub label: String,
}

/// Digitized P&ID document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPid {
    pub nodes: Vec<RawNode>,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
}

impl RawPid {
    pub fn validate(&self) -> Result<(), FunctionalError> {
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(FunctionalError::Malformed(format!("duplicate node id `{}`", n.id)));
            }
            if n.kind == RawKind::Equipment && n.label.trim().is_empty() {
                return Err(FunctionalError::Malformed(format!("equipment `{}` has no label", n.id)));
            }
        }
        let mut seen = HashSet::new();
        for [a, b] in &self.edges {
            for id in [a, b] {
                if !ids.contains(id.as_str()) {
                    return Err(FunctionalError::Malformed(format!("edge references unknown node `{id}`")));
                }
            }
            if a == b {
                return Err(FunctionalError::Malformed(format!("self-loop on `{a}`")));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if !seen.insert(key) {
                return Err(FunctionalError::Malformed(format!("duplicate edge `{a}`-`{b}`")));
            }
        }
        Ok(())
    }

    fn degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|[a, b]| a == id || b == id).count()
    }

    fn neighbors(&self, id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter_map(|[a, b]| {
                if a == id {
                    Some(b.clone())
                } else if b == id {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalBuild {
    pub graph: AlignmentGraph,
    /// Equipment labels not found in the vocabulary, by node id.
    pub unknown_labels: Vec<(String, String)>,
}

/// Normalizes a raw P&ID into the shared representation. Nodes in
/// `keep_hidden` are exempt from simplification.
pub fn build_functional_graph(
    raw: &RawPid,
    keep_hidden: &[String],
    vocab: Option<&Vocabulary>,
) -> Result<FunctionalBuild, FunctionalError> {
    raw.validate()?;
    let known: HashSet<&str> = raw.nodes.iter().map(|n| n.id.as_str()).collect();
    if let Some(missing) = keep_hidden.iter().find(|id| !known.contains(id.as_str())) {
        return Err(FunctionalError::UnknownNode(missing.clone()));
    }

    let mut unknown_labels = Vec::new();
    let nodes: Vec<(String, NodeAttribute)> = raw
        .nodes
        .iter()
        .map(|n| {
            let attr = match n.kind {
                RawKind::PipeJunction => NodeAttribute::pipe_junction(),
                RawKind::PipeRun => NodeAttribute::pipe_run(),
                RawKind::Equipment => {
                    let label = match vocab {
                        Some(v) => {
                            let (label, ok) = v.resolve(&n.label);
                            if !ok {
                                log::warn!("label `{}` on `{}` is not in the vocabulary", n.label, n.id);
                                unknown_labels.push((n.id.clone(), label.clone()));
                            }
                            label
                        }
                        None => normalize_label(&n.label),
                    };
                    NodeAttribute::equipment(label)
                }
            };
            (n.id.clone(), attr)
        })
        .collect();
    let edges = raw.edges.iter().map(|[a, b]| (a.clone(), b.clone()));
    let graph = AlignmentGraph::new(Provenance::Functional, nodes, edges)
        .map_err(|e| FunctionalError::Malformed(e.to_string()))?;
    let exempt: BTreeSet<String> = keep_hidden.iter().cloned().collect();
    Ok(FunctionalBuild { graph: graph.simplify_except(&exempt), unknown_labels })
}

/// Removes equipment symbols from the diagram. A degree-2 symbol is spliced
/// out (its neighbours become adjacent); degree 0 or 1 symbols are dropped.
pub fn remove_equipment(raw: &RawPid, ids: &[String]) -> Result<RawPid, FunctionalError> {
    raw.validate()?;
    let mut out = raw.clone();
    for id in ids {
        let kinds: HashMap<&str, RawKind> = out.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();
        match kinds.get(id.as_str()) {
            None => return Err(FunctionalError::UnknownNode(id.clone())),
            Some(RawKind::Equipment) => {}
            Some(_) => return Err(FunctionalError::NotEquipment(id.clone())),
        }
        let degree = out.degree(id);
        if degree > 2 {
            return Err(FunctionalError::DegreeTooHigh { id: id.clone(), degree });
        }
        let nbrs = out.neighbors(id);
        out.nodes.retain(|n| &n.id != id);
        out.edges.retain(|[a, b]| a != id && b != id);
        if let [a, b] = nbrs.as_slice() {
            let exists = out.edges.iter().any(|[x, y]| (x == a && y == b) || (x == b && y == a));
            if !exists {
                out.edges.push([a.clone(), b.clone()]);
            }
        }
    }
    Ok(out)
}
