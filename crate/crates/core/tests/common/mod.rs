#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pidalign_core::{build_functional_graph, AlignmentGraph, RawPid, SceneConfig, SceneInput, Vocabulary};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub struct Plant {
    pub scene: SceneInput,
    pub pid: RawPid,
    pub vocab: Vocabulary,
    /// Scene graph id -> functional graph id.
    pub truth: BTreeMap<String, String>,
    pub source: AlignmentGraph,
    pub target: AlignmentGraph,
}

pub fn plant() -> Plant {
    let scene: SceneInput = serde_json::from_str(&read("occluded_filter/scene.json")).unwrap();
    let pid: RawPid = serde_json::from_str(&read("occluded_filter/pid.json")).unwrap();
    let vocab = Vocabulary::parse(&read("occluded_filter/vocab.txt"));
    let truth = serde_json::from_str(&read("occluded_filter/truth.json")).unwrap();
    let source = scene.build(&SceneConfig::default()).unwrap().graph;
    let target = build_functional_graph(&pid, &[], Some(&vocab)).unwrap().graph;
    Plant { scene, pid, vocab, truth, source, target }
}

/// Label-aware count of nodes whose image matches `truth`.
pub fn correct(mapping: &pidalign_core::Mapping, truth: &BTreeMap<String, String>) -> usize {
    mapping.pairs.iter().filter(|p| truth.get(&p.source) == Some(&p.target)).count()
}

/// All bijections S -> F preserving labels and edges (both ways), by
/// backtracking. Stops after `limit` results.
pub fn isomorphisms(s: &AlignmentGraph, f: &AlignmentGraph, limit: usize) -> Vec<BTreeMap<String, String>> {
    fn go(
        s: &AlignmentGraph,
        f: &AlignmentGraph,
        order: &[&str],
        used: &mut Vec<bool>,
        current: &mut Vec<(String, String)>,
        out: &mut Vec<BTreeMap<String, String>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        let k = current.len();
        if k == order.len() {
            out.push(current.iter().cloned().collect());
            return;
        }
        let v = order[k];
        for (j, cand) in f.nodes().iter().enumerate() {
            if used[j] || cand.attr != s.node(v).unwrap().attr || f.degree(&cand.id) != s.degree(v) {
                continue;
            }
            let ok = current.iter().all(|(a, b)| s.has_edge(a, v) == f.has_edge(b, &cand.id));
            if ok {
                used[j] = true;
                current.push((v.to_owned(), cand.id.clone()));
                go(s, f, order, used, current, out, limit);
                current.pop();
                used[j] = false;
            }
        }
    }
    if s.node_count() != f.node_count() || s.edge_count() != f.edge_count() {
        return Vec::new();
    }
    let order = s.sorted_ids();
    let mut out = Vec::new();
    go(s, f, &order, &mut vec![false; f.node_count()], &mut Vec::new(), &mut out, limit);
    out
}

/// Σ (Cs[i,k] − Cf[j,l])² T[i,j] T[k,l] by direct summation.
pub fn gw_brute(cs: &ndarray::Array2<f64>, cf: &ndarray::Array2<f64>, t: &ndarray::Array2<f64>) -> f64 {
    let (n, m) = t.dim();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            for k in 0..n {
                for l in 0..m {
                    total += (cs[[i, k]] - cf[[j, l]]).powi(2) * t[[i, j]] * t[[k, l]];
                }
            }
        }
    }
    total
}
