//! Uniform voxel grid for fixed-radius point queries.

use std::collections::HashMap;

pub type Point3 = [f64; 3];

#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Points tagged with an owner index, bucketed in cubic cells. Queries with
/// a radius no larger than the cell size only need the 27 surrounding cells.
#[derive(Debug)]
pub struct PointGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    points: Vec<(usize, Point3)>,
}

impl PointGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        Self { cell, cells: HashMap::new(), points: Vec::new() }
    }

    fn key(&self, p: &Point3) -> [i64; 3] {
        [(p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64, (p[2] / self.cell).floor() as i64]
    }

    pub fn insert(&mut self, owner: usize, p: Point3) {
        let k = self.key(&p);
        self.cells.entry(k).or_default().push(self.points.len());
        self.points.push((owner, p));
    }

    /// Calls `visit(owner, distance)` for every stored point strictly closer
    /// than `radius` to `p`.
    pub fn for_each_within(&self, p: &Point3, radius: f64, mut visit: impl FnMut(usize, f64)) {
        debug_assert!(radius <= self.cell);
        let [kx, ky, kz] = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let (owner, q) = &self.points[i];
                        let d = distance(p, q);
                        if d < radius {
                            visit(*owner, d);
                        }
                    }
                }
            }
        }
    }
}
