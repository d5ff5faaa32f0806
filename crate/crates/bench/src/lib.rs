//! Inputs shared by the benchmarks.

use dhgcn::geometry::{sample_synthetic, ShapeClass, SyntheticSpec};
use dhgcn::PointCloud;

/// A seeded synthetic cloud of `points` points.
pub fn cloud(points: usize, seed: u64) -> PointCloud {
    sample_synthetic(&SyntheticSpec {
        class: ShapeClass::ALL[(seed % ShapeClass::ALL.len() as u64) as usize],
        points,
        seed,
        params: None,
    })
    .expect("valid synthetic spec")
}
