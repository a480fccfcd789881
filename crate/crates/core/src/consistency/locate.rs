use crate::graph::AlignmentGraph;
use crate::matcher::Mapping;
use crate::scene::SceneInput;
use crate::spatial::{distance, Point3};

use super::ConsistencyError;

/// Approximate position of a target-only object, from the scene
/// primitives its matched neighbours map back to.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLocation {
    pub center: Point3,
    pub radius: f64,
}

enum Primitive<'a> {
    Pipe { points: &'a [Point3], diameter: f64 },
    Equipment { points: &'a [Point3] },
}

impl Primitive<'_> {
    fn points(&self) -> &[Point3] {
        match self {
            Primitive::Pipe { points, .. } | Primitive::Equipment { points } => points,
        }
    }
}

fn lookup<'a>(scene: &'a SceneInput, id: &str) -> Result<Primitive<'a>, ConsistencyError> {
    if let Some(p) = scene.pipes.iter().find(|p| p.id == id) {
        return Ok(Primitive::Pipe { points: &p.extremities, diameter: p.diameter });
    }
    if let Some(e) = scene.equipment.iter().find(|e| e.id == id) {
        return Ok(Primitive::Equipment { points: &e.points });
    }
    Err(ConsistencyError::UnknownPrimitive(id.to_owned()))
}

fn min_distance(p: &Point3, set: &[Point3]) -> f64 {
    set.iter().map(|q| distance(p, q)).fold(f64::INFINITY, f64::min)
}

fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}

/// Localizes target node `target_id` from the preimages of its target-graph
/// neighbours.
///
/// With several matched neighbours, each contributes the point of its
/// primitive facing the others; the result is their centroid and the radius
/// covering them. With a single pipe neighbour, its free extremity (farthest
/// from every other primitive) is returned with the pipe diameter as radius.
pub fn infer_hidden_location(
    target_id: &str,
    m: &Mapping,
    f: &AlignmentGraph,
    scene: &SceneInput,
) -> Result<HiddenLocation, ConsistencyError> {
    if !f.contains(target_id) {
        return Err(ConsistencyError::UnknownTarget(target_id.to_owned()));
    }
    let mut neighbors = f.neighbors(target_id);
    neighbors.sort_unstable();
    if neighbors.is_empty() {
        return Err(ConsistencyError::NeighborsUnmatched(target_id.to_owned()));
    }
    let mut prims = Vec::with_capacity(neighbors.len());
    for nb in &neighbors {
        let mut pre: Vec<&str> = m.pairs.iter().filter(|p| p.target == *nb).map(|p| p.source.as_str()).collect();
        pre.sort_unstable();
        let Some(src) = pre.first() else {
            return Err(ConsistencyError::NeighborsUnmatched(target_id.to_owned()));
        };
        prims.push((*src, lookup(scene, src)?));
    }

    if let [(id, prim)] = prims.as_slice() {
        return Ok(match prim {
            Primitive::Pipe { points, diameter } => {
                let others: Vec<Point3> = scene
                    .pipes
                    .iter()
                    .filter(|p| p.id != *id)
                    .flat_map(|p| p.extremities.iter().copied())
                    .chain(scene.equipment.iter().flat_map(|e| e.points.iter().copied()))
                    .collect();
                let mut best = points[0];
                let mut best_d = f64::NEG_INFINITY;
                for p in points.iter() {
                    let d = min_distance(p, &others);
                    if d > best_d {
                        best = *p;
                        best_d = d;
                    }
                }
                HiddenLocation { center: best, radius: *diameter }
            }
            Primitive::Equipment { points } => {
                let center = centroid(points);
                let radius = points.iter().map(|p| distance(p, &center)).fold(0.0, f64::max);
                HiddenLocation { center, radius }
            }
        });
    }

    let facing: Vec<Point3> = prims
        .iter()
        .enumerate()
        .map(|(i, (_, prim))| {
            let others: Vec<Point3> = prims
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, (_, o))| o.points().iter().copied())
                .collect();
            let mut best = prim.points()[0];
            let mut best_d = f64::INFINITY;
            for p in prim.points() {
                let d = min_distance(p, &others);
                if d < best_d {
                    best = *p;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    let center = centroid(&facing);
    let radius = facing.iter().map(|p| distance(p, &center)).fold(0.0, f64::max);
    Ok(HiddenLocation { center, radius })
}
