//! Attributed graph matching by entropic Gromov-Wasserstein alignment with
//! learned structure weights.
//!
//! Each graph is summarized by a few intra-graph similarity bases
//! (adjacency, two-hop, attribute similarity). The matcher alternates:
//!
//! 1. a KL proximal-point step on the coupling, solved with log-domain
//!    Sinkhorn, for the GW objective plus a linear attribute cost;
//! 2. a projected-gradient step on the simplex weights of each graph's
//!    bases, with the coupling fixed.
//!
//! Both steps are safeguarded so the objective never increases: a proximal
//! step that would increase it is retried with a larger proximal weight,
//! and the weight step backtracks its learning rate.

pub mod features;
pub mod objective;
pub mod sinkhorn;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AlignmentGraph;
use crate::vocab::Vocabulary;
pub use features::{joint_features, node_features, structure_bases, Basis, FeatureMatrix};
use objective::{gw_gradient, project_simplex, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("cannot match an empty graph ({0})")]
    EmptyGraph(&'static str),
    #[error("non-finite value during {stage} at outer iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("pinned pair references unknown node `{0}`")]
    UnknownPin(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub bases: Vec<Basis>,
    pub epsilon: f64,
    pub outer_iters: usize,
    pub sinkhorn_iters: usize,
    pub weight_lr: f64,
    pub seed: u64,
    pub tol: f64,
    /// Weight of the `1 - Xs Xfᵀ` cost relative to the GW term.
    pub attribute_weight: f64,
    /// Amplitude of the seeded log-perturbation of the initial coupling.
    pub init_noise: f64,
    /// Cost added to coupling entries that contradict a pinned pair.
    pub pin_penalty: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            bases: vec![Basis::Adjacency, Basis::TwoHop, Basis::AttributeSim],
            epsilon: 0.05,
            outer_iters: 50,
            sinkhorn_iters: 100,
            weight_lr: 0.1,
            seed: 0,
            tol: 1e-7,
            attribute_weight: 1.0,
            init_noise: 0.01,
            pin_penalty: 10.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: String| Err(MatchError::InvalidConfig(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.outer_iters == 0 || self.sinkhorn_iters == 0 {
            return bad("iteration counts must be ≥ 1".into());
        }
        if self.bases.is_empty() {
            return bad("at least one structure basis is required".into());
        }
        let unique: BTreeSet<_> = self.bases.iter().collect();
        if unique.len() != self.bases.len() {
            return bad("structure bases must be distinct".into());
        }
        if !(self.weight_lr >= 0.0 && self.tol >= 0.0 && self.attribute_weight >= 0.0 && self.init_noise >= 0.0) {
            return bad("weight_lr, tol, attribute_weight and init_noise must be ≥ 0".into());
        }
        Ok(())
    }
}

/// Soft transport plan between the source (rows) and target (columns) node
/// sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub objective_trace: Vec<f64>,
    pub beta_source: Vec<f64>,
    pub beta_target: Vec<f64>,
    pub bases: Vec<Basis>,
}

/// Per-iteration progress report.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub total: usize,
    pub objective: f64,
}

const MAX_PROX_RETRIES: usize = 12;
const MAX_LR_HALVINGS: usize = 20;
const SINKHORN_TOL: f64 = 1e-12;

pub fn match_graphs(s: &AlignmentGraph, f: &AlignmentGraph, cfg: &MatchConfig) -> Result<Coupling, MatchError> {
    match_graphs_with(s, f, cfg, &[], None, &mut |_| {})
}

/// Full matcher entry point. `pins` are (source id, target id) pairs the
/// operator asserted; conflicting coupling entries are penalized. When
/// `vocab` is `None` the label space is the union of both graphs' labels.
pub fn match_graphs_with(
    s: &AlignmentGraph,
    f: &AlignmentGraph,
    cfg: &MatchConfig,
    pins: &[(String, String)],
    vocab: Option<&Vocabulary>,
    progress: &mut dyn FnMut(Progress),
) -> Result<Coupling, MatchError> {
    cfg.validate()?;
    if s.is_empty() {
        return Err(MatchError::EmptyGraph("source"));
    }
    if f.is_empty() {
        return Err(MatchError::EmptyGraph("target"));
    }
    let problem = build_problem(s, f, cfg, pins, vocab)?;
    let (n, m) = (s.node_count(), f.node_count());
    let p = Array1::from_elem(n, 1.0 / n as f64);
    let q = Array1::from_elem(m, 1.0 / m as f64);

    let k = cfg.bases.len();
    let mut beta_s = vec![1.0 / k as f64; k];
    let mut beta_f = beta_s.clone();
    let mut plan = initial_plan(&p, &q, cfg);
    let mut value = problem.objective(&beta_s, &beta_f, &plan);
    check_finite(value, "initialization", 0)?;
    let mut trace = Vec::with_capacity(cfg.outer_iters);

    for it in 0..cfg.outer_iters {
        let next = proximal_step(&problem, &beta_s, &beta_f, &plan, value, &p, &q, cfg, it)?;
        let change = (&next.0 - &plan).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        plan = next.0;
        value = next.1;

        if cfg.weight_lr > 0.0 {
            let (bs, bf, v) = weight_step(&problem, &beta_s, &beta_f, &plan, value, cfg.weight_lr);
            check_finite(v, "weight update", it)?;
            beta_s = bs;
            beta_f = bf;
            value = v;
        }
        trace.push(value);
        progress(Progress { iteration: it + 1, total: cfg.outer_iters, objective: value });
        log::debug!("outer iteration {} objective {value:.6e} change {change:.3e}", it + 1);
        if change < cfg.tol {
            break;
        }
    }

    Ok(Coupling {
        plan,
        source_ids: s.nodes().iter().map(|n| n.id.clone()).collect(),
        target_ids: f.nodes().iter().map(|n| n.id.clone()).collect(),
        row_marginal: p,
        col_marginal: q,
        objective_trace: trace,
        beta_source: beta_s,
        beta_target: beta_f,
        bases: cfg.bases.clone(),
    })
}

pub fn build_problem(
    s: &AlignmentGraph,
    f: &AlignmentGraph,
    cfg: &MatchConfig,
    pins: &[(String, String)],
    vocab: Option<&Vocabulary>,
) -> Result<Problem, MatchError> {
    let owned;
    let vocab = match vocab {
        Some(v) => v,
        None => {
            owned = Vocabulary::from_graphs([s, f]);
            &owned
        }
    };
    let (xs, xf) = joint_features(s, f, vocab);
    let source_bases = structure_bases(s, &xs.matrix, &cfg.bases);
    let target_bases = structure_bases(f, &xf.matrix, &cfg.bases);
    let mut linear_cost = xs.matrix.dot(&xf.matrix.t()).mapv(|v| cfg.attribute_weight * (1.0 - v));
    for (src, tgt) in pins {
        let i = s.position(src).ok_or_else(|| MatchError::UnknownPin(src.clone()))?;
        let j = f.position(tgt).ok_or_else(|| MatchError::UnknownPin(tgt.clone()))?;
        for jj in (0..f.node_count()).filter(|&jj| jj != j) {
            linear_cost[[i, jj]] += cfg.pin_penalty;
        }
        for ii in (0..s.node_count()).filter(|&ii| ii != i) {
            linear_cost[[ii, j]] += cfg.pin_penalty;
        }
    }
    Ok(Problem { source_bases, target_bases, linear_cost })
}

fn check_finite(v: f64, stage: &'static str, iteration: usize) -> Result<(), MatchError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(MatchError::NonFinite { stage, iteration })
    }
}

fn initial_plan(p: &Array1<f64>, q: &Array1<f64>, cfg: &MatchConfig) -> Array2<f64> {
    let (n, m) = (p.len(), q.len());
    if cfg.init_noise == 0.0 {
        return Array2::from_shape_fn((n, m), |(i, j)| p[i] * q[j]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let log_kernel = Array2::from_shape_fn((n, m), |_| cfg.init_noise * rng.random_range(-1.0..1.0));
    sinkhorn::sinkhorn_log(&log_kernel, p.view(), q.view(), cfg.sinkhorn_iters, SINKHORN_TOL).plan
}

/// One KL proximal step `argmin <∇L(T), T'> + eps KL(T' | T)`; the
/// proximal weight grows until the objective does not increase, and the
/// old plan is kept if no weight works.
#[allow(clippy::too_many_arguments)]
fn proximal_step(
    problem: &Problem,
    beta_s: &[f64],
    beta_f: &[f64],
    plan: &Array2<f64>,
    value: f64,
    p: &Array1<f64>,
    q: &Array1<f64>,
    cfg: &MatchConfig,
    it: usize,
) -> Result<(Array2<f64>, f64), MatchError> {
    let (cs, cf) = problem.similarity(beta_s, beta_f);
    let grad = gw_gradient(&cs, &cf, plan) + &problem.linear_cost;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(MatchError::NonFinite { stage: "gradient", iteration: it });
    }
    // floored so entries that underflowed to zero can recover
    let log_plan = plan.mapv(|v| v.max(f64::MIN_POSITIVE).ln());
    let mut eps = cfg.epsilon;
    for _ in 0..MAX_PROX_RETRIES {
        let log_kernel = &log_plan - &grad.mapv(|g| g / eps);
        let candidate = sinkhorn::sinkhorn_log(&log_kernel, p.view(), q.view(), cfg.sinkhorn_iters, SINKHORN_TOL).plan;
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(MatchError::NonFinite { stage: "sinkhorn", iteration: it });
        }
        let next = problem.objective(beta_s, beta_f, &candidate);
        check_finite(next, "objective", it)?;
        if next <= value {
            return Ok((candidate, next));
        }
        eps *= 4.0;
    }
    Ok((plan.clone(), value))
}

fn weight_step(
    problem: &Problem,
    beta_s: &[f64],
    beta_f: &[f64],
    plan: &Array2<f64>,
    value: f64,
    lr: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    let (gs, gf) = problem.beta_gradient(beta_s, beta_f, plan);
    let mut lr = lr;
    for _ in 0..MAX_LR_HALVINGS {
        let bs = project_simplex(&beta_s.iter().zip(&gs).map(|(b, g)| b - lr * g).collect::<Vec<_>>());
        let bf = project_simplex(&beta_f.iter().zip(&gf).map(|(b, g)| b - lr * g).collect::<Vec<_>>());
        let v = problem.objective(&bs, &bf, plan);
        if v <= value {
            return (bs, bf, v);
        }
        lr *= 0.5;
    }
    (beta_s.to_vec(), beta_f.to_vec(), value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedPair {
    pub source: String,
    pub target: String,
    pub confidence: f64,
}

/// Hard node-to-node assignment decoded from a coupling. Total on the
/// source nodes; collisions are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub pairs: Vec<MappedPair>,
    pub unmatched_target: Vec<String>,
}

impl Mapping {
    /// Builds a mapping with confidence 1 from explicit pairs; targets not
    /// hit by any pair are listed as unmatched.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>, f: &AlignmentGraph) -> Self {
        let pairs: Vec<MappedPair> = pairs
            .into_iter()
            .map(|(s, t)| MappedPair { source: s.to_owned(), target: t.to_owned(), confidence: 1.0 })
            .collect();
        let hit: BTreeSet<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
        let unmatched_target = f.sorted_ids().into_iter().filter(|id| !hit.contains(id)).map(str::to_owned).collect();
        Self { pairs, unmatched_target }
    }

    pub fn assign(&self) -> BTreeMap<&str, &str> {
        self.pairs.iter().map(|p| (p.source.as_str(), p.target.as_str())).collect()
    }

    pub fn target_of(&self, source: &str) -> Option<&str> {
        self.pairs.iter().find(|p| p.source == source).map(|p| p.target.as_str())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("mapping serializes");
        s.push('\n');
        s
    }
}

/// Row-argmax decoding. Exact ties go to the smallest target id.
pub fn extract_mapping(c: &Coupling) -> Mapping {
    let mut pairs = Vec::with_capacity(c.source_ids.len());
    for (i, row) in c.plan.axis_iter(Axis(0)).enumerate() {
        let mut best: Option<(f64, &str)> = None;
        for (j, &v) in row.iter().enumerate() {
            let id = c.target_ids[j].as_str();
            best = match best {
                None => Some((v, id)),
                Some((bv, bid)) if v > bv || (v == bv && id < bid) => Some((v, id)),
                keep => keep,
            };
        }
        let (max, target) = best.expect("coupling has at least one column");
        let total = row.sum();
        let confidence = if total > 0.0 { max / total } else { 0.0 };
        pairs.push(MappedPair { source: c.source_ids[i].clone(), target: target.to_owned(), confidence });
    }
    let hit: BTreeSet<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
    let mut unmatched_target: Vec<String> =
        c.target_ids.iter().filter(|id| !hit.contains(id.as_str())).cloned().collect();
    unmatched_target.sort();
    Mapping { pairs, unmatched_target }
}

/// JSON sidecar describing a binary coupling dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub order: String,
    pub source_nodes: Vec<String>,
    pub target_nodes: Vec<String>,
    pub objective_trace: Vec<f64>,
    pub bases: Vec<Basis>,
    pub beta_source: Vec<f64>,
    pub beta_target: Vec<f64>,
}

impl Coupling {
    /// Row-major little-endian f64 dump of the plan.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.plan.len() * 8);
        for v in self.plan.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn sidecar(&self) -> CouplingSidecar {
        let (rows, cols) = self.plan.dim();
        CouplingSidecar {
            rows,
            cols,
            dtype: "f64-le".into(),
            order: "row-major".into(),
            source_nodes: self.source_ids.clone(),
            target_nodes: self.target_ids.clone(),
            objective_trace: self.objective_trace.clone(),
            bases: self.bases.clone(),
            beta_source: self.beta_source.clone(),
            beta_target: self.beta_target.clone(),
        }
    }

    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }

    pub fn from_parts(sidecar: &CouplingSidecar, bytes: &[u8]) -> Result<Self, crate::Error> {
        let expected = sidecar.rows * sidecar.cols * 8;
        if bytes.len() != expected {
            return Err(crate::Error::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("coupling has {} bytes, expected {expected}", bytes.len()),
            )));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let plan = Array2::from_shape_vec((sidecar.rows, sidecar.cols), values).expect("shape checked");
        Ok(Self {
            row_marginal: plan.sum_axis(Axis(1)),
            col_marginal: plan.sum_axis(Axis(0)),
            plan,
            source_ids: sidecar.source_nodes.clone(),
            target_ids: sidecar.target_nodes.clone(),
            objective_trace: sidecar.objective_trace.clone(),
            beta_source: sidecar.beta_source.clone(),
            beta_target: sidecar.beta_target.clone(),
            bases: sidecar.bases.clone(),
        })
    }

    /// Largest absolute deviation of row and column sums from the uniform
    /// marginals.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self.plan.sum_axis(Axis(1));
        let cols = self.plan.sum_axis(Axis(0));
        let r = (&rows - &self.row_marginal).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let c = (&cols - &self.col_marginal).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        r.max(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeAttribute, Provenance};
    use ndarray::array;

    fn coupling(plan: Array2<f64>, src: &[&str], tgt: &[&str]) -> Coupling {
        Coupling {
            row_marginal: plan.sum_axis(Axis(1)),
            col_marginal: plan.sum_axis(Axis(0)),
            plan,
            source_ids: src.iter().map(|s| s.to_string()).collect(),
            target_ids: tgt.iter().map(|s| s.to_string()).collect(),
            objective_trace: vec![],
            beta_source: vec![],
            beta_target: vec![],
            bases: vec![],
        }
    }

    #[test]
    fn diagonal_plan_decodes_to_identity() {
        let c = coupling(array![[0.49, 0.01], [0.01, 0.49]], &["a", "b"], &["x", "y"]);
        let m = extract_mapping(&c);
        assert_eq!(m.target_of("a"), Some("x"));
        assert_eq!(m.target_of("b"), Some("y"));
        assert!((m.pairs[0].confidence - 0.98).abs() < 1e-12);
        assert!(m.unmatched_target.is_empty());
    }

    #[test]
    fn uniform_plan_ties_to_smallest_target_id() {
        // column order deliberately not sorted
        let c = coupling(Array2::from_elem((2, 2), 0.25), &["a", "b"], &["y", "x"]);
        let m = extract_mapping(&c);
        assert_eq!(m.target_of("a"), Some("x"));
        assert_eq!(m.target_of("b"), Some("x"));
        assert_eq!(m.pairs[0].confidence, 0.5);
        assert_eq!(m.unmatched_target, vec!["y".to_string()]);
    }

    #[test]
    fn empty_graph_rejected() {
        let e = AlignmentGraph::empty(Provenance::Scene);
        let g = AlignmentGraph::new(Provenance::Functional, [("a".to_string(), NodeAttribute::equipment("valve"))], [])
            .unwrap();
        assert_eq!(match_graphs(&e, &g, &MatchConfig::default()), Err(MatchError::EmptyGraph("source")));
        assert_eq!(match_graphs(&g, &e, &MatchConfig::default()), Err(MatchError::EmptyGraph("target")));
    }

    #[test]
    fn config_validation() {
        let bad = MatchConfig { epsilon: 0.0, ..MatchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MatchConfig { outer_iters: 0, ..MatchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MatchConfig { bases: vec![], ..MatchConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn binary_roundtrip() {
        let c = coupling(array![[0.25, 0.25], [0.125, 0.375]], &["a", "b"], &["x", "y"]);
        let bytes = c.to_le_bytes();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[..8], &0.25f64.to_le_bytes());
        let back = Coupling::from_parts(&c.sidecar(), &bytes).unwrap();
        assert_eq!(back.plan, c.plan);
    }
}
