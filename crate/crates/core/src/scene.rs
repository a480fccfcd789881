//! Scene graph construction from reconstructed pipe primitives and
//! segmented equipment.
//!
//! Construction runs in three steps: pipe elements are linked to their
//! closest neighbours, equipment is attached to nearby pipe ends, and the
//! resulting graph is simplified (degree-2 pipe contraction, open-end
//! pruning).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AlignmentGraph, NodeAttribute, Provenance};
use crate::spatial::{distance, Point3, PointGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid element `{id}`: {reason}")]
    InvalidElement { id: String, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipeKind {
    Cylinder,
    Elbow,
    Tee,
    #[serde(alias = "y-junction", alias = "yjunction")]
    YJunction,
    Reducer,
}

impl PipeKind {
    pub fn port_count(self) -> usize {
        match self {
            PipeKind::Cylinder | PipeKind::Elbow | PipeKind::Reducer => 2,
            PipeKind::Tee | PipeKind::YJunction => 3,
        }
    }
}

/// A reconstructed pipe primitive as exported by a pipe-tracing tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeElement {
    pub id: String,
    pub kind: PipeKind,
    pub extremities: Vec<Point3>,
    pub diameter: f64,
}

impl PipeElement {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| SceneError::InvalidElement { id: self.id.clone(), reason };
        if self.extremities.len() != self.kind.port_count() {
            return Err(bad(format!(
                "{:?} needs {} extremities, got {}",
                self.kind,
                self.kind.port_count(),
                self.extremities.len()
            )));
        }
        if !self.extremities.iter().flatten().all(|c| c.is_finite()) {
            return Err(bad("non-finite coordinate".into()));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(bad(format!("diameter must be positive, got {}", self.diameter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipmentInstance {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    pub points: Vec<Point3>,
}

impl EquipmentInstance {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::InvalidElement { id: self.id.clone(), reason: reason.into() };
        if self.points.is_empty() {
            return Err(bad("equipment has no points"));
        }
        if !self.points.iter().flatten().all(|c| c.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if self.class_label.trim().is_empty() {
            return Err(bad("empty class label"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquipmentAttach {
    ClosestOnly,
    #[default]
    AllWithinThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Meters.
    pub link_threshold: f64,
    pub equipment_attach: EquipmentAttach,
    pub max_equipment_points: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            link_threshold: 0.04,
            equipment_attach: EquipmentAttach::AllWithinThreshold,
            max_equipment_points: 2048,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.link_threshold > 0.0 && self.link_threshold.is_finite()) {
            return Err(SceneError::InvalidConfig(format!("link_threshold must be > 0, got {}", self.link_threshold)));
        }
        if self.max_equipment_points == 0 {
            return Err(SceneError::InvalidConfig("max_equipment_points must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Scene input document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneInput {
    #[serde(default)]
    pub pipes: Vec<PipeElement>,
    #[serde(default)]
    pub equipment: Vec<EquipmentInstance>,
}

/// A pipe node whose linked degree exceeds its physical port count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeWarning {
    pub node_id: String,
    pub degree: usize,
    pub port_count: usize,
}

#[derive(Debug, Clone)]
pub struct SceneBuild {
    /// Simplified scene graph.
    pub graph: AlignmentGraph,
    /// Graph after linking and attachment, before simplification.
    pub linked: AlignmentGraph,
    pub warnings: Vec<DegreeWarning>,
}

pub type EdgeSet = BTreeSet<(String, String)>;

fn undirected(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// Minimum Euclidean distance between any pair of extremities.
pub fn pipe_distance(a: &PipeElement, b: &PipeElement) -> f64 {
    a.extremities.iter().flat_map(|p| b.extremities.iter().map(move |q| distance(p, q))).fold(f64::INFINITY, f64::min)
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<(), SceneError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(SceneError::DuplicateId(id.to_owned()));
        }
    }
    Ok(())
}

/// For every owner near `points`, the minimum distance (strictly below the
/// grid radius).
fn nearest_owners(grid: &PointGrid, points: &[Point3], radius: f64) -> BTreeMap<usize, f64> {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for p in points {
        grid.for_each_within(p, radius, |owner, d| {
            let e = best.entry(owner).or_insert(f64::INFINITY);
            if d < *e {
                *e = d;
            }
        });
    }
    best
}

fn extremity_grid(pipes: &[PipeElement], cell: f64) -> PointGrid {
    let mut grid = PointGrid::new(cell);
    for (i, pipe) in pipes.iter().enumerate() {
        for p in &pipe.extremities {
            grid.insert(i, *p);
        }
    }
    grid
}

/// Links each pipe element to its `port_count` closest elements within the
/// threshold; the edge set is the union of all selections.
pub fn link_pipe_elements(pipes: &[PipeElement], cfg: &SceneConfig) -> Result<EdgeSet, SceneError> {
    cfg.validate()?;
    check_unique(pipes.iter().map(|p| p.id.as_str()))?;
    let grid = extremity_grid(pipes, cfg.link_threshold);
    let mut edges = EdgeSet::new();
    for (i, pipe) in pipes.iter().enumerate() {
        let mut near: Vec<(f64, &str)> = nearest_owners(&grid, &pipe.extremities, cfg.link_threshold)
            .into_iter()
            .filter(|&(j, _)| j != i)
            .map(|(j, d)| (d, pipes[j].id.as_str()))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        for (_, other) in near.into_iter().take(pipe.kind.port_count()) {
            edges.insert(undirected(&pipe.id, other));
        }
    }
    Ok(edges)
}

/// Minimum distance between any equipment point and any pipe extremity.
pub fn equipment_distance(eq: &EquipmentInstance, pipe: &PipeElement) -> f64 {
    eq.points.iter().flat_map(|p| pipe.extremities.iter().map(move |q| distance(p, q))).fold(f64::INFINITY, f64::min)
}

fn stable_hash(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Uniform seeded subsample of an equipment cloud, keyed on the instance id
/// so the choice does not depend on input order.
pub fn subsample_points(eq: &EquipmentInstance, cfg: &SceneConfig) -> Vec<Point3> {
    if eq.points.len() <= cfg.max_equipment_points {
        return eq.points.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(&eq.id));
    let mut picked = index::sample(&mut rng, eq.points.len(), cfg.max_equipment_points).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| eq.points[i]).collect()
}

pub fn attach_equipment(
    equipment: &[EquipmentInstance],
    pipes: &[PipeElement],
    cfg: &SceneConfig,
) -> Result<EdgeSet, SceneError> {
    cfg.validate()?;
    check_unique(equipment.iter().map(|e| e.id.as_str()).chain(pipes.iter().map(|p| p.id.as_str())))?;
    let grid = extremity_grid(pipes, cfg.link_threshold);
    let mut edges = EdgeSet::new();
    for eq in equipment {
        let points = subsample_points(eq, cfg);
        let mut near: Vec<(f64, &str)> = nearest_owners(&grid, &points, cfg.link_threshold)
            .into_iter()
            .map(|(j, d)| (d, pipes[j].id.as_str()))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let take = match cfg.equipment_attach {
            EquipmentAttach::ClosestOnly => 1,
            EquipmentAttach::AllWithinThreshold => near.len(),
        };
        for (_, pipe) in near.into_iter().take(take) {
            edges.insert(undirected(&eq.id, pipe));
        }
    }
    Ok(edges)
}

pub fn build_scene_graph(
    pipes: &[PipeElement],
    equipment: &[EquipmentInstance],
    cfg: &SceneConfig,
) -> Result<SceneBuild, SceneError> {
    cfg.validate()?;
    for p in pipes {
        p.validate()?;
    }
    for e in equipment {
        e.validate()?;
    }
    let mut edges = link_pipe_elements(pipes, cfg)?;
    edges.extend(attach_equipment(equipment, pipes, cfg)?);

    let nodes = pipes
        .iter()
        .map(|p| {
            let attr =
                if p.kind.port_count() >= 3 { NodeAttribute::pipe_junction() } else { NodeAttribute::pipe_run() };
            (p.id.clone(), attr)
        })
        .chain(equipment.iter().map(|e| (e.id.clone(), NodeAttribute::equipment(e.class_label.clone()))));
    let linked = AlignmentGraph::new(Provenance::Scene, nodes, edges).map_err(|e| match e {
        crate::GraphError::DuplicateNode(id) => SceneError::DuplicateId(id),
        other => SceneError::InvalidElement { id: String::new(), reason: other.to_string() },
    })?;

    let adj = linked.adjacency();
    let mut warnings: Vec<DegreeWarning> = pipes
        .iter()
        .filter_map(|p| {
            let degree = adj[p.id.as_str()].len();
            (degree > p.kind.port_count()).then(|| DegreeWarning {
                node_id: p.id.clone(),
                degree,
                port_count: p.kind.port_count(),
            })
        })
        .collect();
    warnings.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    for w in &warnings {
        log::warn!("pipe `{}` has degree {} but only {} ports", w.node_id, w.degree, w.port_count);
    }

    let graph = linked.simplify();
    Ok(SceneBuild { graph, linked, warnings })
}

impl SceneInput {
    pub fn build(&self, cfg: &SceneConfig) -> Result<SceneBuild, SceneError> {
        build_scene_graph(&self.pipes, &self.equipment, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyl(id: &str, a: Point3, b: Point3) -> PipeElement {
        PipeElement { id: id.into(), kind: PipeKind::Cylinder, extremities: vec![a, b], diameter: 0.1 }
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        undirected(a, b)
    }

    #[test]
    fn pipe_distance_examples() {
        let a = cyl("a", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(pipe_distance(&a, &a), 0.0);
        let b = cyl("b", [1.02, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert!((pipe_distance(&a, &b) - 0.02).abs() < 1e-12);
        let c = cyl("c", [0.0, 3.0, 0.0], [0.0, 4.0, 0.0]);
        assert!((pipe_distance(&a, &c) - 3.0).abs() < 1e-12);
        assert_eq!(pipe_distance(&a, &c), pipe_distance(&c, &a));
    }

    #[test]
    fn collinear_cylinders_link_neighbours_only() {
        let pipes = vec![
            cyl("C1", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            cyl("C2", [1.02, 0.0, 0.0], [2.02, 0.0, 0.0]),
            cyl("C3", [2.04, 0.0, 0.0], [3.04, 0.0, 0.0]),
        ];
        let edges = link_pipe_elements(&pipes, &SceneConfig::default()).unwrap();
        assert_eq!(edges, [pair("C1", "C2"), pair("C2", "C3")].into_iter().collect());
    }

    #[test]
    fn gap_above_threshold_gives_no_edge() {
        let pipes = vec![cyl("C1", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), cyl("C2", [1.1, 0.0, 0.0], [2.0, 0.0, 0.0])];
        assert!(link_pipe_elements(&pipes, &SceneConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn tee_links_three_cylinders() {
        let tee = PipeElement {
            id: "T".into(),
            kind: PipeKind::Tee,
            extremities: vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0], [0.0, 0.1, 0.0]],
            diameter: 0.1,
        };
        let pipes = vec![
            tee,
            cyl("A", [0.11, 0.0, 0.0], [1.0, 0.0, 0.0]),
            cyl("B", [-0.11, 0.0, 0.0], [-1.0, 0.0, 0.0]),
            cyl("C", [0.0, 0.11, 0.0], [0.0, 1.0, 0.0]),
        ];
        let edges = link_pipe_elements(&pipes, &SceneConfig::default()).unwrap();
        assert_eq!(edges, [pair("T", "A"), pair("T", "B"), pair("T", "C")].into_iter().collect());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let pipes = vec![cyl("C", [0.0; 3], [1.0, 0.0, 0.0]), cyl("C", [2.0, 0.0, 0.0], [3.0, 0.0, 0.0])];
        assert_eq!(link_pipe_elements(&pipes, &SceneConfig::default()), Err(SceneError::DuplicateId("C".into())));
    }

    #[test]
    fn equipment_attachment_modes() {
        let pipes = vec![cyl("P1", [-1.0, 0.0, 0.0], [-0.11, 0.0, 0.0]), cyl("P2", [0.11, 0.0, 0.0], [1.0, 0.0, 0.0])];
        let pump = EquipmentInstance {
            id: "pump".into(),
            class_label: "pump".into(),
            points: vec![[-0.1, 0.0, 0.0], [0.0, 0.0, 0.0], [0.1, 0.0, 0.0]],
        };
        let all = attach_equipment(std::slice::from_ref(&pump), &pipes, &SceneConfig::default()).unwrap();
        assert_eq!(all.len(), 2);
        let cfg = SceneConfig { equipment_attach: EquipmentAttach::ClosestOnly, ..SceneConfig::default() };
        let one = attach_equipment(std::slice::from_ref(&pump), &pipes, &cfg).unwrap();
        assert_eq!(one, [pair("P1", "pump")].into_iter().collect());

        let far = EquipmentInstance { id: "far".into(), class_label: "tank".into(), points: vec![[0.0, 5.0, 0.0]] };
        assert!(attach_equipment(&[far], &pipes, &SceneConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn equipment_only_scene() {
        let eq: Vec<EquipmentInstance> = (0..3)
            .map(|i| EquipmentInstance {
                id: format!("E{i}"),
                class_label: "valve".into(),
                points: vec![[i as f64, 0.0, 0.0]],
            })
            .collect();
        let b = build_scene_graph(&[], &eq, &SceneConfig::default()).unwrap();
        assert_eq!(b.graph.node_count(), 3);
        assert_eq!(b.graph.edge_count(), 0);
    }

    #[test]
    fn invalid_elements_rejected() {
        let mut p = cyl("C", [0.0; 3], [1.0, 0.0, 0.0]);
        p.diameter = 0.0;
        assert!(p.validate().is_err());
        let mut p = cyl("C", [0.0; 3], [1.0, 0.0, 0.0]);
        p.extremities.push([2.0, 0.0, 0.0]);
        assert!(p.validate().is_err());
        let p = cyl("C", [f64::NAN, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert!(p.validate().is_err());
        let cfg = SceneConfig { link_threshold: 0.0, ..SceneConfig::default() };
        assert!(link_pipe_elements(&[], &cfg).is_err());
    }

    #[test]
    fn subsampling_is_bounded_and_seeded() {
        let eq = EquipmentInstance {
            id: "big".into(),
            class_label: "tank".into(),
            points: (0..5000).map(|i| [i as f64, 0.0, 0.0]).collect(),
        };
        let cfg = SceneConfig::default();
        let a = subsample_points(&eq, &cfg);
        assert_eq!(a.len(), 2048);
        assert_eq!(a, subsample_points(&eq, &cfg));
    }

    #[test]
    fn over_degree_is_warned() {
        // Four cylinder ends 1 cm apart on a line: the union of k-closest
        // selections gives the two middle cylinders degree 3.
        let pipes: Vec<PipeElement> =
            (0..4).map(|i| cyl(&format!("C{i}"), [0.01 * i as f64, 0.0, 0.0], [0.0, 1.0, i as f64])).collect();
        let b = build_scene_graph(&pipes, &[], &SceneConfig::default()).unwrap();
        assert!(!b.warnings.is_empty());
        let ids: Vec<&str> = b.warnings.iter().map(|w| w.node_id.as_str()).collect();
        assert_eq!(ids, vec!["C1", "C2"]);
        assert!(b.warnings.iter().all(|w| w.port_count == 2 && w.degree == 3));
    }
}
