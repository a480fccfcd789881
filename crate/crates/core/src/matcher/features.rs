//! Node attribute features and intra-graph structure bases.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::graph::{AlignmentGraph, NodeKind};
use crate::vocab::{Vocabulary, PIPE_JUNCTION_FEATURE, PIPE_RUN_FEATURE};

pub const OOV_FEATURE: &str = "<oov>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Adjacency,
    TwoHop,
    AttributeSim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub matrix: Array2<f64>,
    pub columns: Vec<String>,
    /// (node id, resolved label) for labels outside the vocabulary.
    pub unknown: Vec<(String, String)>,
}

fn feature_key(g: &AlignmentGraph, i: usize, vocab: &Vocabulary) -> (String, bool) {
    let attr = &g.nodes()[i].attr;
    match attr.kind {
        NodeKind::Pipe if attr.label == crate::graph::PIPE_JUNCTION => (PIPE_JUNCTION_FEATURE.to_owned(), true),
        NodeKind::Pipe => (PIPE_RUN_FEATURE.to_owned(), true),
        NodeKind::Equipment => vocab.resolve(&attr.label),
    }
}

fn encode(graphs: &[&AlignmentGraph], vocab: &Vocabulary) -> Vec<FeatureMatrix> {
    let mut columns = vocab.feature_columns();
    let keys: Vec<Vec<(String, bool)>> =
        graphs.iter().map(|g| (0..g.node_count()).map(|i| feature_key(g, i, vocab)).collect()).collect();
    if keys.iter().flatten().any(|(_, known)| !known) {
        columns.push(OOV_FEATURE.to_owned());
    }
    graphs
        .iter()
        .zip(keys)
        .map(|(g, keys)| {
            let mut matrix = Array2::zeros((g.node_count(), columns.len()));
            let mut unknown = Vec::new();
            for (i, (key, known)) in keys.into_iter().enumerate() {
                let col = if known {
                    columns.iter().position(|c| *c == key).expect("known label has a column")
                } else {
                    log::warn!("label `{key}` of node `{}` is outside the vocabulary", g.nodes()[i].id);
                    unknown.push((g.nodes()[i].id.clone(), key));
                    columns.len() - 1
                };
                matrix[[i, col]] = 1.0;
            }
            FeatureMatrix { matrix, columns: columns.clone(), unknown }
        })
        .collect()
}

/// One-hot node features over the vocabulary plus the two pipe subkinds,
/// rows in graph node order. Unknown labels share one out-of-vocabulary
/// column, added only when needed.
pub fn node_features(g: &AlignmentGraph, vocab: &Vocabulary) -> FeatureMatrix {
    encode(&[g], vocab).pop().expect("one graph")
}

/// Features for two graphs in a shared column space.
pub fn joint_features(s: &AlignmentGraph, f: &AlignmentGraph, vocab: &Vocabulary) -> (FeatureMatrix, FeatureMatrix) {
    let mut v = encode(&[s, f], vocab);
    let ff = v.pop().expect("two graphs");
    let fs = v.pop().expect("two graphs");
    (fs, ff)
}

pub fn adjacency_matrix(g: &AlignmentGraph) -> Array2<f64> {
    let n = g.node_count();
    let mut a = Array2::zeros((n, n));
    for e in g.edges() {
        let (x, y) = e.endpoints();
        let (i, j) = (g.position(x).expect("endpoint"), g.position(y).expect("endpoint"));
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

/// Per requested basis: adjacency, squared symmetric-normalized adjacency,
/// and feature inner products, all clipped to [0, 1].
pub fn structure_bases(g: &AlignmentGraph, features: &Array2<f64>, bases: &[Basis]) -> Vec<Array2<f64>> {
    let a = adjacency_matrix(g);
    bases
        .iter()
        .map(|b| {
            let m = match b {
                Basis::Adjacency => a.clone(),
                Basis::TwoHop => {
                    let inv_sqrt: Vec<f64> = a
                        .rows()
                        .into_iter()
                        .map(|r| {
                            let d = r.sum();
                            if d > 0.0 {
                                1.0 / d.sqrt()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mut norm = a.clone();
                    for ((i, j), v) in norm.indexed_iter_mut() {
                        *v *= inv_sqrt[i] * inv_sqrt[j];
                    }
                    norm.dot(&norm)
                }
                Basis::AttributeSim => features.dot(&features.t()),
            };
            m.mapv(|v| v.clamp(0.0, 1.0))
        })
        .collect()
}
