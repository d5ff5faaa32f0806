use super::{GeometryError, Point};

/// Axis-aligned bounding box. Zero-extent boxes are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    min: Point,
    max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Result<Self, GeometryError> {
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(GeometryError::Invalid(format!(
                "box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// The canonical box of an empty part: a point at the origin.
    pub fn zero() -> Self {
        Self {
            min: [0.0; 3],
            max: [0.0; 3],
        }
    }

    /// Tight box around the points, or `None` when there are none.
    pub fn from_points(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let (mut min, mut max) = (first, first);
        for p in iter {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Self { min, max })
    }

    pub fn min(&self) -> Point {
        self.min
    }

    pub fn max(&self) -> Point {
        self.max
    }

    pub fn center(&self) -> Point {
        [0, 1, 2].map(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn extent(&self) -> Point {
        [0, 1, 2].map(|k| self.max[k] - self.min[k])
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    /// Scales the box about its center by `factor` along every axis.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let half = self.extent().map(|e| 0.5 * e * factor);
        Self {
            min: [0, 1, 2].map(|k| c[k] - half[k]),
            max: [0, 1, 2].map(|k| c[k] + half[k]),
        }
    }

    /// Closed-interval overlap on all three axes; touching faces intersect.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_corners() {
        assert!(Aabb::new([0.0, 1.0, 0.0], [1.0, 0.0, 1.0]).is_err());
        assert!(Aabb::new([1.0; 3], [1.0; 3]).is_ok());
    }

    #[test]
    fn scaling_about_center() {
        let b = Aabb::new([0.0; 3], [1.0; 3]).unwrap().scaled(1.2);
        for k in 0..3 {
            assert!((b.min()[k] + 0.1).abs() < 1e-12);
            assert!((b.max()[k] - 1.1).abs() < 1e-12);
        }
        let p = Aabb::from_points([[0.3, -0.2, 4.0]]).unwrap();
        assert_eq!(p.scaled(1.2), p);
        assert_eq!(p.volume(), 0.0);
    }

    #[test]
    fn closed_interval_intersection() {
        let a = Aabb::new([0.0; 3], [1.0; 3]).unwrap();
        let touching = Aabb::new([1.0; 3], [2.0; 3]).unwrap();
        let apart = Aabb::new([2.0; 3], [3.0; 3]).unwrap();
        let separated_on_z = Aabb::new([0.0, 0.0, 1.5], [1.0, 1.0, 2.0]).unwrap();
        assert!(a.intersects(&touching) && touching.intersects(&a));
        assert!(!a.intersects(&apart));
        assert!(!a.intersects(&separated_on_z));
    }
}
