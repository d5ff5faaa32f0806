//! Point clouds and the spatial utilities around them.

mod aabb;
mod augment;
mod dataset;
mod io;
mod knn;
mod synthetic;

use std::path::PathBuf;

pub use aabb::Aabb;
pub use augment::{augment, AugmentParams, Rotation};
pub use dataset::{Dataset, DatasetSpec, Sample};
pub use io::{load_points, parse_points, save_points, write_points};
pub use knn::knn;
pub use synthetic::{sample_synthetic, ShapeClass, ShapeParams, SyntheticSpec};

pub type Point = [f64; 3];

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    Empty,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected 3 columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("k = {k} exceeds the {n} available keys")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GeometryError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// N×3 coordinates with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    pub label: Option<usize>,
}

/// What [`PointCloud::normalize_unit_sphere`] removed from the input cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub centroid: Point,
    pub scale: f64,
    /// All points coincided; the cloud was only centered.
    pub degenerate: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, label: Option<usize>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points, label })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates as a flat row-major N×3 buffer.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for (acc, v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        c.map(|v| v / n)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.points.iter().copied()).expect("non-empty cloud")
    }

    /// Reorders points: output point i is input point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }

    /// Centers at the origin and scales the farthest point to norm 1.
    pub fn normalize_unit_sphere(&self) -> (Self, Normalization) {
        let centroid = self.centroid();
        let centered: Vec<Point> = self
            .points
            .iter()
            .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
            .collect();
        let radius = centered.iter().map(norm).fold(0.0, f64::max);
        let degenerate = radius <= f64::MIN_POSITIVE;
        let scale = if degenerate { 1.0 } else { radius };
        let points = centered.into_iter().map(|p| p.map(|c| c / scale)).collect();
        (
            Self {
                points,
                label: self.label,
            },
            Normalization {
                centroid,
                scale,
                degenerate,
            },
        )
    }
}

pub(crate) fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}
