//! Shared attributed graph representation for scene and functional graphs,
//! plus the two simplification passes both builders apply.
//!
//! Nodes are either equipment (carrying a class label such as `valve`) or
//! pipes (labelled `run` or `junction`). Edges are undirected and mean
//! "these two objects touch".

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PIPE_RUN: &str = "run";
pub const PIPE_JUNCTION: &str = "junction";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge `{0}`-`{1}`")]
    DuplicateEdge(String, String),
    #[error("unknown edge `{0}`-`{1}`")]
    UnknownEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("invalid attribute on `{id}`: {reason}")]
    InvalidAttribute { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Equipment,
    Pipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Scene,
    Functional,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeAttribute {
    pub kind: NodeKind,
    pub label: String,
}

impl NodeAttribute {
    pub fn equipment(label: impl Into<String>) -> Self {
        Self { kind: NodeKind::Equipment, label: label.into() }
    }

    pub fn pipe_run() -> Self {
        Self { kind: NodeKind::Pipe, label: PIPE_RUN.to_owned() }
    }

    pub fn pipe_junction() -> Self {
        Self { kind: NodeKind::Pipe, label: PIPE_JUNCTION.to_owned() }
    }

    pub fn is_pipe(&self) -> bool {
        self.kind == NodeKind::Pipe
    }

    fn validate(&self, id: &str) -> Result<(), GraphError> {
        let bad = |reason: &str| GraphError::InvalidAttribute { id: id.to_owned(), reason: reason.to_owned() };
        match self.kind {
            NodeKind::Pipe if self.label != PIPE_RUN && self.label != PIPE_JUNCTION => {
                Err(bad("pipe label must be `run` or `junction`"))
            }
            NodeKind::Equipment if self.label.trim().is_empty() => Err(bad("equipment label is empty")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub attr: NodeAttribute,
}

/// An undirected edge stored with its endpoints in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge(String, String);

impl Edge {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn endpoints(&self) -> (&str, &str) {
        (&self.0, &self.1)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Immutable-by-convention attributed graph. All transformations return a
/// new value.
#[derive(Debug, Clone)]
pub struct AlignmentGraph {
    provenance: Provenance,
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: BTreeSet<Edge>,
    version: u64,
}

impl PartialEq for AlignmentGraph {
    fn eq(&self, other: &Self) -> bool {
        self.provenance == other.provenance && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl AlignmentGraph {
    pub fn new<I, E>(provenance: Provenance, nodes: I, edges: E) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (String, NodeAttribute)>,
        E: IntoIterator<Item = (String, String)>,
    {
        let mut g = Self::empty(provenance);
        for (id, attr) in nodes {
            g.insert_node(id, attr)?;
        }
        for (a, b) in edges {
            g.insert_edge(&a, &b)?;
        }
        Ok(g)
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self { provenance, nodes: Vec::new(), index: HashMap::new(), edges: BTreeSet::new(), version: 0 }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.position(id).map(|i| &self.nodes[i])
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    pub fn adjacency(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut adj: BTreeMap<&str, BTreeSet<&str>> =
            self.nodes.iter().map(|n| (n.id.as_str(), BTreeSet::new())).collect();
        for Edge(a, b) in &self.edges {
            adj.get_mut(a.as_str()).expect("edge endpoint").insert(b.as_str());
            adj.get_mut(b.as_str()).expect("edge endpoint").insert(a.as_str());
        }
        adj
    }

    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter_map(|Edge(a, b)| {
                if a == id {
                    Some(b.as_str())
                } else if b == id {
                    Some(a.as_str())
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|Edge(a, b)| a == id || b == id).count()
    }

    /// Node ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    fn insert_node(&mut self, id: String, attr: NodeAttribute) -> Result<(), GraphError> {
        attr.validate(&id)?;
        if self.index.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.index.insert(id.clone(), self.nodes.len());
        self.nodes.push(Node { id, attr });
        Ok(())
    }

    fn insert_edge(&mut self, a: &str, b: &str) -> Result<(), GraphError> {
        for id in [a, b] {
            if !self.contains(id) {
                return Err(GraphError::UnknownNode(id.to_owned()));
            }
        }
        if a == b {
            return Err(GraphError::SelfLoop(a.to_owned()));
        }
        if !self.edges.insert(Edge::new(a, b)) {
            let e = Edge::new(a, b);
            return Err(GraphError::DuplicateEdge(e.0, e.1));
        }
        Ok(())
    }

    fn remove_node(&mut self, id: &str) -> Result<(), GraphError> {
        let pos = self.position(id).ok_or_else(|| GraphError::UnknownNode(id.to_owned()))?;
        self.nodes.remove(pos);
        self.edges.retain(|Edge(a, b)| a != id && b != id);
        self.reindex();
        Ok(())
    }

    fn reindex(&mut self) {
        self.index = self.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    }

    /// Rebuilds a graph keeping only `keep` nodes (original order) and the
    /// given edge set.
    fn rebuilt(&self, keep: &BTreeSet<String>, edges: BTreeSet<Edge>) -> Self {
        let nodes: Vec<Node> = self.nodes.iter().filter(|n| keep.contains(&n.id)).cloned().collect();
        let mut g = Self { provenance: self.provenance, nodes, index: HashMap::new(), edges, version: self.version };
        g.reindex();
        g
    }

    /// Applies a batch of edits atomically. The input is left untouched and
    /// the returned graph carries an incremented version.
    pub fn apply_edits(&self, edits: &[GraphEdit]) -> Result<Self, GraphError> {
        let mut g = self.clone();
        for edit in edits {
            match edit {
                GraphEdit::AddNode { id, attr } => g.insert_node(id.clone(), attr.clone())?,
                GraphEdit::RemoveNode { id } => g.remove_node(id)?,
                GraphEdit::AddEdge { a, b } => g.insert_edge(a, b)?,
                GraphEdit::RemoveEdge { a, b } => {
                    for id in [a, b] {
                        if !g.contains(id) {
                            return Err(GraphError::UnknownNode(id.clone()));
                        }
                    }
                    if !g.edges.remove(&Edge::new(a.as_str(), b.as_str())) {
                        return Err(GraphError::UnknownEdge(a.clone(), b.clone()));
                    }
                }
                GraphEdit::SetAttribute { id, attr } => {
                    attr.validate(id)?;
                    let pos = g.position(id).ok_or_else(|| GraphError::UnknownNode(id.clone()))?;
                    g.nodes[pos].attr = attr.clone();
                }
            }
        }
        g.version = self.version + 1;
        Ok(g)
    }

    /// Removes every pipe node of degree exactly two that touches another
    /// pipe, joining its two neighbours, until no such node remains.
    /// Candidates are processed in ascending id order, so inside a chain the
    /// highest id survives.
    pub fn contract_degree2_pipes(&self) -> Self {
        self.contract_degree2_pipes_except(&BTreeSet::new())
    }

    /// As [`Self::contract_degree2_pipes`], never removing `exempt` nodes.
    pub fn contract_degree2_pipes_except(&self, exempt: &BTreeSet<String>) -> Self {
        let mut work = WorkGraph::new(self, exempt);
        let mut queue: BTreeSet<String> = work.adj.keys().filter(|id| work.is_contractible(id)).cloned().collect();
        while let Some(id) = queue.pop_first() {
            if !work.is_contractible(&id) {
                continue;
            }
            let nbrs: Vec<String> = work.adj[&id].iter().cloned().collect();
            work.remove(&id);
            work.link(&nbrs[0], &nbrs[1]);
            for n in &nbrs {
                if work.is_contractible(n) {
                    queue.insert(n.clone());
                } else {
                    queue.remove(n);
                }
            }
        }
        work.finish(self)
    }

    /// Removes pipe nodes of degree < 2 until fixpoint. Equipment is never
    /// removed.
    pub fn prune_open_pipes(&self) -> Self {
        self.prune_open_pipes_except(&BTreeSet::new())
    }

    pub fn prune_open_pipes_except(&self, exempt: &BTreeSet<String>) -> Self {
        let mut work = WorkGraph::new(self, exempt);
        let mut queue: BTreeSet<String> = work.adj.keys().filter(|id| work.is_open_pipe(id)).cloned().collect();
        while let Some(id) = queue.pop_first() {
            if !work.is_open_pipe(&id) {
                continue;
            }
            let nbrs: Vec<String> = work.adj[&id].iter().cloned().collect();
            work.remove(&id);
            queue.extend(nbrs.into_iter().filter(|n| work.is_open_pipe(n)));
        }
        work.finish(self)
    }

    /// Alternates contraction and pruning until neither changes the graph,
    /// then relabels surviving pipes by degree (`junction` when ≥ 3).
    pub fn simplify(&self) -> Self {
        self.simplify_except(&BTreeSet::new())
    }

    pub fn simplify_except(&self, exempt: &BTreeSet<String>) -> Self {
        let mut g = self.clone();
        loop {
            let next = g.contract_degree2_pipes_except(exempt).prune_open_pipes_except(exempt);
            if next == g {
                break;
            }
            g = next;
        }
        g.relabel_pipes()
    }

    pub fn relabel_pipes(&self) -> Self {
        let adj = self.adjacency();
        let mut g = self.clone();
        for node in g.nodes.iter_mut().filter(|n| n.attr.is_pipe()) {
            node.attr = if adj[node.id.as_str()].len() >= 3 {
                NodeAttribute::pipe_junction()
            } else {
                NodeAttribute::pipe_run()
            };
        }
        g
    }

    pub fn to_doc(&self) -> GraphDoc {
        let mut nodes: Vec<NodeDoc> = self
            .nodes
            .iter()
            .map(|n| NodeDoc { id: n.id.clone(), kind: n.attr.kind, label: n.attr.label.clone() })
            .collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        GraphDoc {
            provenance: self.provenance,
            nodes,
            edges: self.edges.iter().map(|Edge(a, b)| [a.clone(), b.clone()]).collect(),
        }
    }

    pub fn from_doc(doc: GraphDoc) -> Result<Self, GraphError> {
        Self::new(
            doc.provenance,
            doc.nodes.into_iter().map(|n| (n.id, NodeAttribute { kind: n.kind, label: n.label })),
            doc.edges.into_iter().map(|[a, b]| (a, b)),
        )
    }

    /// Canonical JSON: nodes sorted by id, edges sorted lexicographically,
    /// two-space indentation, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, crate::Error> {
        let doc: GraphDoc = serde_json::from_str(text)?;
        Ok(Self::from_doc(doc)?)
    }
}

/// Mutable adjacency used internally by the simplification passes.
struct WorkGraph<'a> {
    kinds: HashMap<String, NodeKind>,
    adj: BTreeMap<String, BTreeSet<String>>,
    exempt: &'a BTreeSet<String>,
}

impl<'a> WorkGraph<'a> {
    fn new(g: &AlignmentGraph, exempt: &'a BTreeSet<String>) -> Self {
        let kinds = g.nodes.iter().map(|n| (n.id.clone(), n.attr.kind)).collect();
        let adj = g
            .adjacency()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v.into_iter().map(str::to_owned).collect()))
            .collect();
        Self { kinds, adj, exempt }
    }

    fn is_pipe(&self, id: &str) -> bool {
        self.kinds[id] == NodeKind::Pipe
    }

    fn is_contractible(&self, id: &str) -> bool {
        match self.adj.get(id) {
            Some(nbrs) => {
                !self.exempt.contains(id) && self.is_pipe(id) && nbrs.len() == 2 && nbrs.iter().any(|n| self.is_pipe(n))
            }
            None => false,
        }
    }

    fn is_open_pipe(&self, id: &str) -> bool {
        self.adj.get(id).is_some_and(|nbrs| !self.exempt.contains(id) && self.is_pipe(id) && nbrs.len() < 2)
    }

    fn remove(&mut self, id: &str) {
        if let Some(nbrs) = self.adj.remove(id) {
            for n in nbrs {
                self.adj.get_mut(&n).expect("symmetric adjacency").remove(id);
            }
        }
    }

    fn link(&mut self, a: &str, b: &str) {
        self.adj.get_mut(a).expect("live node").insert(b.to_owned());
        self.adj.get_mut(b).expect("live node").insert(a.to_owned());
    }

    fn finish(self, original: &AlignmentGraph) -> AlignmentGraph {
        let keep: BTreeSet<String> = self.adj.keys().cloned().collect();
        let edges = self
            .adj
            .iter()
            .flat_map(|(a, nbrs)| nbrs.iter().filter(move |b| a < *b).map(move |b| Edge::new(a.as_str(), b.as_str())))
            .collect();
        original.rebuilt(&keep, edges)
    }
}

/// One graph modification requested by the human resolution step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GraphEdit {
    AddNode {
        id: String,
        #[serde(flatten)]
        attr: NodeAttribute,
    },
    RemoveNode {
        id: String,
    },
    AddEdge {
        a: String,
        b: String,
    },
    RemoveEdge {
        a: String,
        b: String,
    },
    SetAttribute {
        id: String,
        #[serde(flatten)]
        attr: NodeAttribute,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

/// On-disk graph document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub provenance: Provenance,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<[String; 2]>,
}
