//! Volumetric partition of a cloud into `s³` voxel parts and the
//! ground-truth hop-distance graph between them.
//!
//! Pipeline: [`voxelize`] → [`scaled_aabb`] per part → [`build_adjacency`]
//! → [`hop_distances`]; [`ground_truth`] runs all four.

mod graph;
mod voxel;

pub use graph::{build_adjacency, hop_distances, Adjacency, HopMatrix};
pub use voxel::{scaled_aabb, voxelize, Partition};

use crate::geometry::PointCloud;

/// Factor applied to every part's bounding box before the overlap test.
pub const DEFAULT_BOX_SCALE: f64 = 1.2;
/// Default grid split per axis.
pub const DEFAULT_SPLIT: usize = 3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("split must be at least 2, got {0}")]
    Split(usize),
    #[error("box scale factor must be >= 1, got {0}")]
    Factor(f64),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("{what}: expected {expected} entries, got {got}")]
    Size {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Partition and hop matrix for one cloud, with truncation at `split + 1`.
pub fn ground_truth(
    cloud: &PointCloud,
    split: usize,
    factor: f64,
) -> Result<(Partition, HopMatrix), PartitionError> {
    if !(factor >= 1.0) {
        return Err(PartitionError::Factor(factor));
    }
    let partition = voxelize(cloud, split)?;
    let boxes: Vec<_> = partition
        .parts()
        .iter()
        .map(|idx| scaled_aabb(idx.iter().map(|&i| cloud.points()[i]), factor))
        .collect();
    let adjacency = build_adjacency(&boxes, partition.nonempty())?;
    let hops = hop_distances(&adjacency, split + 1)?;
    Ok((partition, hops))
}
