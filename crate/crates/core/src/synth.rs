//! Seeded synthetic instances for property suites, benchmarks and smoke
//! tests.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{AlignmentGraph, GraphEdit, NodeAttribute, Provenance};
use crate::scene::{EquipmentInstance, PipeElement, PipeKind, SceneInput};

/// Random connected graph with `n` equipment nodes labelled from
/// `l0..l{labels-1}` and edge density drawn from `density` (fraction of all
/// node pairs). Every label is used when `n >= labels`.
pub fn random_attributed_graph<R: Rng>(rng: &mut R, n: usize, density: (f64, f64), labels: usize) -> AlignmentGraph {
    assert!(n >= 1 && labels >= 1);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
    let mut label_of: Vec<usize> = (0..n).map(|i| i % labels).collect();
    label_of.shuffle(rng);

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for k in 1..n {
        let a = order[k];
        let b = order[rng.random_range(0..k)];
        edges.insert((a.min(b), a.max(b)));
    }
    let pairs = n * (n - 1) / 2;
    let d = if density.0 < density.1 { rng.random_range(density.0..density.1) } else { density.0 };
    let target = ((d * pairs as f64).round() as usize).clamp(edges.len(), pairs);
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    AlignmentGraph::new(
        Provenance::Scene,
        (0..n).map(|i| (ids[i].clone(), NodeAttribute::equipment(format!("l{}", label_of[i])))),
        edges.into_iter().map(|(a, b)| (ids[a].clone(), ids[b].clone())),
    )
    .expect("generated graph is valid")
}

/// Relabels and reorders the nodes of `g`. Returns the copy and the true
/// correspondence from `g`'s ids to the copy's ids.
pub fn permuted_copy<R: Rng>(rng: &mut R, g: &AlignmentGraph) -> (AlignmentGraph, BTreeMap<String, String>) {
    let n = g.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let truth: BTreeMap<String, String> =
        g.nodes().iter().enumerate().map(|(i, node)| (node.id.clone(), format!("m{:03}", perm[i]))).collect();
    let mut nodes: Vec<(String, NodeAttribute)> =
        g.nodes().iter().map(|node| (truth[&node.id].clone(), node.attr.clone())).collect();
    nodes.shuffle(rng);
    let edges = g.edges().map(|e| {
        let (a, b) = e.endpoints();
        (truth[a].clone(), truth[b].clone())
    });
    let copy = AlignmentGraph::new(Provenance::Functional, nodes, edges).expect("permuted copy is valid");
    (copy, truth)
}

/// Deletes a random degree-2 node and joins its neighbours (unless already
/// adjacent). Returns `None` when the graph has no degree-2 node.
pub fn splice_random_degree2<R: Rng>(rng: &mut R, g: &AlignmentGraph) -> Option<(AlignmentGraph, String)> {
    let adj = g.adjacency();
    let candidates: Vec<&str> = adj.iter().filter(|(_, nb)| nb.len() == 2).map(|(id, _)| *id).collect();
    let id = *candidates.get(rng.random_range(0..candidates.len().max(1)))?;
    let nb: Vec<&str> = adj[id].iter().copied().collect();
    let mut edits = vec![GraphEdit::RemoveNode { id: id.to_owned() }];
    if !g.has_edge(nb[0], nb[1]) {
        edits.push(GraphEdit::AddEdge { a: nb[0].to_owned(), b: nb[1].to_owned() });
    }
    Some((g.apply_edits(&edits).expect("splice is valid"), id.to_owned()))
}

fn random_point<R: Rng>(rng: &mut R, extent: f64) -> [f64; 3] {
    [rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(0.0..extent)]
}

/// Random primitives in a small box, dense enough that many pairs fall
/// under a few-centimetre threshold.
pub fn random_scene<R: Rng>(rng: &mut R, max_pipes: usize, max_equipment: usize) -> SceneInput {
    let n_pipes = rng.random_range(0..=max_pipes);
    let n_eq = rng.random_range(0..=max_equipment);
    let extent = 0.05 * (n_pipes.max(1) as f64).cbrt() * 3.0;
    let kinds = [PipeKind::Cylinder, PipeKind::Elbow, PipeKind::Tee, PipeKind::YJunction, PipeKind::Reducer];
    let pipes = (0..n_pipes)
        .map(|i| {
            let kind = kinds[rng.random_range(0..kinds.len())];
            PipeElement {
                id: format!("p{i:03}"),
                kind,
                extremities: (0..kind.port_count()).map(|_| random_point(rng, extent)).collect(),
                diameter: rng.random_range(0.02..0.3),
            }
        })
        .collect();
    let equipment = (0..n_eq)
        .map(|i| EquipmentInstance {
            id: format!("e{i:02}"),
            class_label: ["valve", "pump", "filter", "tank"][rng.random_range(0..4)].into(),
            points: (0..rng.random_range(1..20)).map(|_| random_point(rng, extent)).collect(),
        })
        .collect();
    SceneInput { pipes, equipment }
}
