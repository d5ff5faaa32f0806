use crate::geometry::{Aabb, Point, PointCloud};

use super::PartitionError;

/// Assignment of every point to one of `split³` grid cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    split: usize,
    assignment: Vec<usize>,
    parts: Vec<Vec<usize>>,
    nonempty: Vec<bool>,
}

impl Partition {
    /// Builds a partition from per-point part indices.
    pub fn from_assignment(split: usize, assignment: Vec<usize>) -> Result<Self, PartitionError> {
        if split < 2 {
            return Err(PartitionError::Split(split));
        }
        let v = split.pow(3);
        let mut parts = vec![Vec::new(); v];
        for (point, &part) in assignment.iter().enumerate() {
            if part >= v {
                return Err(PartitionError::Size {
                    what: "part index",
                    expected: v,
                    got: part,
                });
            }
            parts[part].push(point);
        }
        let nonempty = parts.iter().map(|p| !p.is_empty()).collect();
        Ok(Self {
            split,
            assignment,
            parts,
            nonempty,
        })
    }

    pub fn split(&self) -> usize {
        self.split
    }

    /// Number of parts, `split³`.
    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Point indices per part, ascending.
    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn nonempty(&self) -> &[bool] {
        &self.nonempty
    }

    pub fn occupied(&self) -> usize {
        self.nonempty.iter().filter(|&&b| b).count()
    }

    /// Grid coordinates `(ix, iy, iz)` of a flat part index.
    pub fn cell(&self, part: usize) -> [usize; 3] {
        let s = self.split;
        [part / (s * s), (part / s) % s, part % s]
    }
}

/// Maps each point to a cell of an `s × s × s` grid over the cloud's tight
/// bounding cube.
///
/// The cube side is the largest extent over the three axes and the cube is
/// centered on the cloud's box along every axis. Cell indices are
/// `floor((x - lo) / cell)` clamped to `[0, s-1]`, flattened as
/// `ix·s² + iy·s + iz`. A cloud with zero extent lands in a single cell.
pub fn voxelize(cloud: &PointCloud, split: usize) -> Result<Partition, PartitionError> {
    if split < 2 {
        return Err(PartitionError::Split(split));
    }
    let bounds = cloud.bounds();
    let extent = bounds.extent().iter().copied().fold(0.0, f64::max);
    let center = bounds.center();
    let lo: Point = [0, 1, 2].map(|k| center[k] - 0.5 * extent);
    let cell = extent / split as f64;
    let top = split - 1;
    let axis_index = |x: f64, k: usize| -> usize {
        if cell <= 0.0 {
            return 0;
        }
        let t = ((x - lo[k]) / cell).floor();
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(top)
        }
    };
    let assignment = cloud
        .points()
        .iter()
        .map(|p| {
            let [ix, iy, iz] = [0, 1, 2].map(|k| axis_index(p[k], k));
            ix * split * split + iy * split + iz
        })
        .collect();
    Partition::from_assignment(split, assignment)
}

/// Tight box of the points, scaled about its center. An empty part gets the
/// zero-volume box at the origin.
pub fn scaled_aabb(points: impl IntoIterator<Item = Point>, factor: f64) -> Aabb {
    Aabb::from_points(points).map_or_else(Aabb::zero, |b| b.scaled(factor))
}
