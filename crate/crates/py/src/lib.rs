use std::collections::BTreeSet;

use pidalign_core::consistency::{self, ConsistencyError};
use pidalign_core::matcher::{self, MatchError};
use pidalign_core::{GraphEdit, RawPid, SceneConfig, SceneInput, Vocabulary};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn match_err(e: MatchError) -> PyErr {
    match e {
        MatchError::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        other => invalid(other),
    }
}

fn consistency_err(e: ConsistencyError) -> PyErr {
    match e {
        ConsistencyError::Match(m) => match_err(m),
        ConsistencyError::Io(io) => PyRuntimeError::new_err(io.to_string()),
        other => invalid(other),
    }
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: pidalign_core::AlignmentGraph,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        pidalign_core::AlignmentGraph::from_json(text).map(|inner| Self { inner }).map_err(invalid)
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn node_ids(&self) -> Vec<String> {
        self.inner.sorted_ids().into_iter().map(str::to_owned).collect()
    }

    fn edges(&self) -> Vec<(String, String)> {
        self.inner.edges().map(|e| (e.endpoints().0.to_owned(), e.endpoints().1.to_owned())).collect()
    }

    fn has_edge(&self, a: &str, b: &str) -> bool {
        self.inner.has_edge(a, b)
    }

    /// (kind, label) of a node.
    fn attribute(&self, id: &str) -> PyResult<(String, String)> {
        let node = self.inner.node(id).ok_or_else(|| invalid(format!("unknown node `{id}`")))?;
        let kind = serde_json::to_value(node.attr.kind).unwrap().as_str().unwrap().to_owned();
        Ok((kind, node.attr.label.clone()))
    }

    fn simplify(&self) -> Self {
        Self { inner: self.inner.simplify() }
    }

    /// Applies a JSON list of edits, e.g. `[{"op": "remove_edge", "a": "x", "b": "y"}]`.
    fn apply_edits(&self, edits_json: &str) -> PyResult<Self> {
        let edits: Vec<GraphEdit> = serde_json::from_str(edits_json).map_err(invalid)?;
        self.inner.apply_edits(&edits).map(|inner| Self { inner }).map_err(invalid)
    }

    fn __len__(&self) -> usize {
        self.inner.node_count()
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

#[pyfunction]
#[pyo3(signature = (scene_json, link_threshold = 0.04, seed = 0))]
fn build_scene_graph(scene_json: &str, link_threshold: f64, seed: u64) -> PyResult<Graph> {
    let scene: SceneInput = serde_json::from_str(scene_json).map_err(invalid)?;
    let cfg = SceneConfig { link_threshold, seed, ..SceneConfig::default() };
    scene.build(&cfg).map(|b| Graph { inner: b.graph }).map_err(invalid)
}

#[pyfunction]
#[pyo3(signature = (pid_json, keep_hidden = Vec::new(), vocab = None, remove_equipment = Vec::new()))]
fn build_functional_graph(
    pid_json: &str,
    keep_hidden: Vec<String>,
    vocab: Option<&str>,
    remove_equipment: Vec<String>,
) -> PyResult<Graph> {
    let mut raw: RawPid = serde_json::from_str(pid_json).map_err(invalid)?;
    if !remove_equipment.is_empty() {
        raw = pidalign_core::remove_equipment(&raw, &remove_equipment).map_err(invalid)?;
    }
    let vocab = vocab.map(Vocabulary::parse);
    pidalign_core::build_functional_graph(&raw, &keep_hidden, vocab.as_ref())
        .map(|b| Graph { inner: b.graph })
        .map_err(invalid)
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Mapping {
    inner: pidalign_core::Mapping,
}

#[pymethods]
impl Mapping {
    /// (source, target, confidence) triples in source-node order.
    #[getter]
    fn pairs(&self) -> Vec<(String, String, f64)> {
        self.inner.pairs.iter().map(|p| (p.source.clone(), p.target.clone(), p.confidence)).collect()
    }

    #[getter]
    fn unmatched_target(&self) -> Vec<String> {
        self.inner.unmatched_target.clone()
    }

    fn target_of(&self, source: &str) -> Option<String> {
        self.inner.target_of(source).map(str::to_owned)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(invalid)
    }

    fn __repr__(&self) -> String {
        format!("Mapping(pairs={}, unmatched_target={:?})", self.inner.pairs.len(), self.inner.unmatched_target)
    }
}

#[pyclass(frozen)]
struct Coupling {
    inner: pidalign_core::Coupling,
}

#[pymethods]
impl Coupling {
    fn plan(&self) -> Vec<Vec<f64>> {
        self.inner.plan.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.plan.dim()
    }

    #[getter]
    fn source_ids(&self) -> Vec<String> {
        self.inner.source_ids.clone()
    }

    #[getter]
    fn target_ids(&self) -> Vec<String> {
        self.inner.target_ids.clone()
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.inner.objective_trace.clone()
    }

    #[getter]
    fn beta_source(&self) -> Vec<f64> {
        self.inner.beta_source.clone()
    }

    #[getter]
    fn beta_target(&self) -> Vec<f64> {
        self.inner.beta_target.clone()
    }

    fn marginal_violation(&self) -> f64 {
        self.inner.marginal_violation()
    }

    /// Row-major little-endian float64 dump of the plan.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_le_bytes())
    }

    fn mapping(&self) -> Mapping {
        Mapping { inner: matcher::extract_mapping(&self.inner) }
    }
}

fn match_config(
    seed: u64,
    epsilon: Option<f64>,
    outer_iters: Option<usize>,
    config_json: Option<&str>,
) -> PyResult<matcher::MatchConfig> {
    let mut cfg: matcher::MatchConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(invalid)?,
        None => matcher::MatchConfig::default(),
    };
    cfg.seed = seed;
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    if let Some(n) = outer_iters {
        cfg.outer_iters = n;
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

#[pyfunction]
#[pyo3(signature = (source, target, seed = 0, epsilon = None, outer_iters = None, config_json = None, pins = Vec::new(), vocab = None))]
#[allow(clippy::too_many_arguments)]
fn match_graphs(
    py: Python<'_>,
    source: &Graph,
    target: &Graph,
    seed: u64,
    epsilon: Option<f64>,
    outer_iters: Option<usize>,
    config_json: Option<&str>,
    pins: Vec<(String, String)>,
    vocab: Option<&str>,
) -> PyResult<Coupling> {
    let cfg = match_config(seed, epsilon, outer_iters, config_json)?;
    let vocab = vocab.map(Vocabulary::parse);
    let (s, f) = (&source.inner, &target.inner);
    py.detach(|| matcher::match_graphs_with(s, f, &cfg, &pins, vocab.as_ref(), &mut |_| {}))
        .map(|inner| Coupling { inner })
        .map_err(match_err)
}

#[pyclass(frozen)]
struct Inconsistency {
    inner: consistency::Inconsistency,
}

#[pymethods]
impl Inconsistency {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn kind(&self) -> String {
        serde_json::to_value(self.inner.kind).unwrap().as_str().unwrap().to_owned()
    }

    #[getter]
    fn status(&self) -> String {
        serde_json::to_value(self.inner.status).unwrap().as_str().unwrap().to_owned()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).unwrap()
    }

    fn __repr__(&self) -> String {
        format!("Inconsistency({}, {})", self.inner.id, self.status())
    }
}

fn wrap(items: Vec<consistency::Inconsistency>) -> Vec<Inconsistency> {
    items.into_iter().map(|inner| Inconsistency { inner }).collect()
}

#[pyfunction]
#[pyo3(signature = (mapping, source, target, accepted = Vec::new()))]
fn get_inconsistencies(mapping: &Mapping, source: &Graph, target: &Graph, accepted: Vec<String>) -> Vec<Inconsistency> {
    let accepted: BTreeSet<String> = accepted.into_iter().collect();
    wrap(pidalign_core::get_inconsistencies(&mapping.inner, &source.inner, &target.inner, &accepted))
}

/// Stateful match → detect → resolve loop driven from Python.
#[pyclass]
struct AlignmentSession {
    inner: consistency::AlignmentSession,
    config: matcher::MatchConfig,
}

#[pymethods]
impl AlignmentSession {
    #[new]
    #[pyo3(signature = (source, target, project_id = "session", seed = 0, vocab = None, checkpoint_dir = None))]
    fn new(
        source: &Graph,
        target: &Graph,
        project_id: &str,
        seed: u64,
        vocab: Option<&str>,
        checkpoint_dir: Option<String>,
    ) -> PyResult<Self> {
        let mut inner = consistency::AlignmentSession::new(project_id, source.inner.clone(), target.inner.clone());
        inner.vocab = vocab.map(Vocabulary::parse);
        inner.checkpoint_dir = checkpoint_dir.map(Into::into);
        Ok(Self { inner, config: match_config(seed, None, None, None)? })
    }

    /// Runs one matching round and returns its inconsistencies.
    fn match_round(&mut self, py: Python<'_>) -> PyResult<Vec<Inconsistency>> {
        let (inner, cfg) = (&mut self.inner, &self.config);
        let report = py.detach(|| inner.match_round(cfg)).map_err(consistency_err)?;
        Ok(wrap(report.items))
    }

    #[pyo3(signature = (accept = Vec::new(), source_edits = None, target_edits = None, pins = Vec::new()))]
    fn resolve(
        &mut self,
        accept: Vec<String>,
        source_edits: Option<&str>,
        target_edits: Option<&str>,
        pins: Vec<(String, String)>,
    ) -> PyResult<()> {
        let parse = |t: Option<&str>| -> PyResult<Vec<GraphEdit>> {
            t.map(|t| serde_json::from_str(t).map_err(invalid)).transpose().map(Option::unwrap_or_default)
        };
        let res = pidalign_core::Resolution {
            source_edits: parse(source_edits)?,
            target_edits: parse(target_edits)?,
            accept,
            pins,
        };
        self.inner.apply_resolution(&res).map_err(consistency_err)
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.history().len()
    }

    #[getter]
    fn mapping(&self) -> Option<Mapping> {
        self.inner.mapping().map(|m| Mapping { inner: m.clone() })
    }

    #[getter]
    fn source(&self) -> Graph {
        Graph { inner: self.inner.source().clone() }
    }

    #[getter]
    fn target(&self) -> Graph {
        Graph { inner: self.inner.target().clone() }
    }

    #[getter]
    fn accepted(&self) -> Vec<String> {
        self.inner.accepted().iter().cloned().collect()
    }

    fn open_inconsistencies(&self) -> Vec<Inconsistency> {
        wrap(self.inner.open_inconsistencies().to_vec())
    }
}

#[pymodule]
fn pidalign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Graph>()?;
    m.add_class::<Mapping>()?;
    m.add_class::<Coupling>()?;
    m.add_class::<Inconsistency>()?;
    m.add_class::<AlignmentSession>()?;
    m.add_function(wrap_pyfunction!(build_scene_graph, m)?)?;
    m.add_function(wrap_pyfunction!(build_functional_graph, m)?)?;
    m.add_function(wrap_pyfunction!(match_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(get_inconsistencies, m)?)?;
    Ok(())
}
