//! Surface samplers for eight primitive shape classes.
//!
//! Parameter ranges drawn when [`SyntheticSpec::params`] is `None`:
//!
//! | field       | range        | meaning                                        |
//! |-------------|--------------|------------------------------------------------|
//! | `radius`    | [0.8, 1.2]   | main size of the shape                         |
//! | `aspect`    | [0.7, 1.3]   | elongation along z relative to `radius`        |
//! | `thickness` | [0.2, 0.35]  | torus tube / cross bar size relative to radius |
//!
//! Clouds are produced in their canonical pose (z up) and are not normalized.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Cone,
    Capsule,
    Cross,
    Pyramid,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
        ShapeClass::Cone,
        ShapeClass::Capsule,
        ShapeClass::Cross,
        ShapeClass::Pyramid,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Cross => "cross",
            ShapeClass::Pyramid => "pyramid",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| GeometryError::Invalid(format!("unknown shape class {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub radius: f64,
    pub aspect: f64,
    pub thickness: f64,
}

impl ShapeParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            radius: rng.random_range(0.8..=1.2),
            aspect: rng.random_range(0.7..=1.3),
            thickness: rng.random_range(0.2..=0.35),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub class: ShapeClass,
    pub points: usize,
    pub seed: u64,
    /// Fixed parameters; drawn from the documented ranges when `None`.
    pub params: Option<ShapeParams>,
}

/// Samples `spec.points` points uniformly (by area) on the ideal surface.
pub fn sample_synthetic(spec: &SyntheticSpec) -> Result<PointCloud, GeometryError> {
    if spec.points < 8 {
        return Err(GeometryError::Invalid(format!(
            "synthetic clouds need at least 8 points, got {}",
            spec.points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = spec.params.unwrap_or_else(|| ShapeParams::draw(&mut rng));
    let mut sampler = Sampler {
        rng: &mut rng,
        p: params,
    };
    let points = (0..spec.points)
        .map(|_| sampler.sample(spec.class))
        .collect();
    PointCloud::new(points, Some(spec.class.index()))
}

struct Sampler<'a> {
    rng: &'a mut ChaCha8Rng,
    p: ShapeParams,
}

impl Sampler<'_> {
    fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn sym(&mut self, half: f64) -> f64 {
        self.rng.random_range(-half..=half)
    }

    /// Picks an index with probability proportional to `weights`.
    fn pick(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.unit() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    fn sample(&mut self, class: ShapeClass) -> Point {
        match class {
            ShapeClass::Sphere => self.sphere([0.0; 3], self.p.radius),
            ShapeClass::Cube => {
                let a = 0.8 * self.p.radius;
                self.box_surface([a, a, a])
            }
            ShapeClass::Cylinder => self.cylinder(),
            ShapeClass::Torus => self.torus(),
            ShapeClass::Cone => self.cone(),
            ShapeClass::Capsule => self.capsule(),
            ShapeClass::Cross => self.cross(),
            ShapeClass::Pyramid => self.pyramid(),
        }
    }

    fn sphere(&mut self, center: Point, r: f64) -> Point {
        let z = 2.0 * self.unit() - 1.0;
        let phi = 2.0 * PI * self.unit();
        let s = (1.0 - z * z).max(0.0).sqrt();
        // normalize again so |p - center| = r to rounding
        let d = [s * phi.cos(), s * phi.sin(), z];
        let n = super::norm(&d);
        [0, 1, 2].map(|k| center[k] + r * d[k] / n)
    }

    fn disk(&mut self, r: f64) -> (f64, f64) {
        let rho = r * self.unit().sqrt();
        let phi = 2.0 * PI * self.unit();
        (rho * phi.cos(), rho * phi.sin())
    }

    fn box_surface(&mut self, half: Point) -> Point {
        let [a, b, c] = half;
        let face = self.pick(&[b * c, b * c, a * c, a * c, a * b, a * b]);
        let axis = face / 2;
        let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut p = [self.sym(a), self.sym(b), self.sym(c)];
        p[axis] = sign * half[axis];
        p
    }

    fn cylinder(&mut self) -> Point {
        let r = self.p.radius;
        let h = r * self.p.aspect;
        let side = 2.0 * PI * r * 2.0 * h;
        let cap = PI * r * r;
        match self.pick(&[side, cap, cap]) {
            0 => {
                let phi = 2.0 * PI * self.unit();
                [r * phi.cos(), r * phi.sin(), self.sym(h)]
            }
            i => {
                let (x, y) = self.disk(r);
                [x, y, if i == 1 { h } else { -h }]
            }
        }
    }

    fn torus(&mut self) -> Point {
        let big = self.p.radius;
        let small = big * self.p.thickness;
        // rejection on the tube angle gives area-uniform samples
        loop {
            let u = 2.0 * PI * self.unit();
            let v = 2.0 * PI * self.unit();
            let accept = (big + small * v.cos()) / (big + small);
            if self.unit() <= accept {
                let ring = big + small * v.cos();
                return [ring * u.cos(), ring * u.sin(), small * v.sin()];
            }
        }
    }

    fn cone(&mut self) -> Point {
        let r = self.p.radius;
        let h = 2.0 * r * self.p.aspect;
        let slant = (r * r + h * h).sqrt();
        let lateral = PI * r * slant;
        let base = PI * r * r;
        let z0 = -0.5 * h;
        if self.pick(&[lateral, base]) == 0 {
            // radius along the slant grows linearly, so sample t ~ sqrt(U)
            let t = self.unit().sqrt();
            let phi = 2.0 * PI * self.unit();
            [t * r * phi.cos(), t * r * phi.sin(), z0 + h * (1.0 - t)]
        } else {
            let (x, y) = self.disk(r);
            [x, y, z0]
        }
    }

    fn capsule(&mut self) -> Point {
        let r = 0.5 * self.p.radius;
        let half_len = self.p.radius * self.p.aspect;
        let side = 2.0 * PI * r * 2.0 * half_len;
        let caps = 4.0 * PI * r * r;
        if self.pick(&[side, caps]) == 0 {
            let phi = 2.0 * PI * self.unit();
            [r * phi.cos(), r * phi.sin(), self.sym(half_len)]
        } else {
            let mut p = self.sphere([0.0; 3], r);
            p[2] += if p[2] >= 0.0 { half_len } else { -half_len };
            p
        }
    }

    fn cross(&mut self) -> Point {
        let arm = self.p.radius;
        let bar = self.p.radius * self.p.thickness;
        let halves = [[arm, bar, bar], [bar, arm, bar], [bar, bar, arm]];
        let area = |h: &Point| 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
        let weights: Vec<f64> = halves.iter().map(area).collect();
        // union surface: sample a bar's surface and reject points buried in another bar
        loop {
            let which = self.pick(&weights);
            let p = self.box_surface(halves[which]);
            let buried = halves
                .iter()
                .enumerate()
                .any(|(j, h)| j != which && (0..3).all(|k| p[k].abs() < h[k]));
            if !buried {
                return p;
            }
        }
    }

    fn pyramid(&mut self) -> Point {
        let a = self.p.radius;
        let h = 1.5 * self.p.radius * self.p.aspect;
        let z0 = -0.5 * h;
        let face_height = (a * a + h * h).sqrt();
        let tri = a * face_height; // base edge 2a times slant height / 2
        let base = 4.0 * a * a;
        let face = self.pick(&[base, tri, tri, tri, tri]);
        if face == 0 {
            return [self.sym(a), self.sym(a), z0];
        }
        // uniform point in triangle (b0, b1, apex)
        let corners = [[a, a], [-a, a], [-a, -a], [a, -a]];
        let (c0, c1) = (corners[face - 1], corners[face % 4]);
        let (mut u, mut v) = (self.unit(), self.unit());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let w = 1.0 - u - v;
        [w * c0[0] + u * c1[0], w * c0[1] + u * c1[1], z0 + v * h]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    fn spec(class: ShapeClass, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            class,
            points: 512,
            seed,
            params: None,
        }
    }

    #[test]
    fn sphere_points_lie_on_the_surface() {
        let cloud = sample_synthetic(&SyntheticSpec {
            params: Some(ShapeParams {
                radius: 1.0,
                aspect: 1.0,
                thickness: 0.3,
            }),
            ..spec(ShapeClass::Sphere, 4)
        })
        .unwrap();
        assert!(cloud.points().iter().all(|p| (norm(p) - 1.0).abs() < 1e-9));
    }

    #[test]
    fn cube_points_lie_on_a_face() {
        let params = ShapeParams {
            radius: 1.0,
            aspect: 1.0,
            thickness: 0.3,
        };
        let cloud = sample_synthetic(&SyntheticSpec {
            params: Some(params),
            ..spec(ShapeClass::Cube, 2)
        })
        .unwrap();
        for p in cloud.points() {
            let m = p.iter().map(|c| c.abs()).fold(0.0, f64::max);
            assert!((m - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn torus_points_lie_on_the_tube() {
        let params = ShapeParams {
            radius: 1.0,
            aspect: 1.0,
            thickness: 0.25,
        };
        let cloud = sample_synthetic(&SyntheticSpec {
            params: Some(params),
            ..spec(ShapeClass::Torus, 3)
        })
        .unwrap();
        for p in cloud.points() {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0;
            assert!(((ring * ring + p[2] * p[2]).sqrt() - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_cloud_and_distinct_seeds_differ() {
        for class in ShapeClass::ALL {
            let a = sample_synthetic(&spec(class, 11)).unwrap();
            let b = sample_synthetic(&spec(class, 11)).unwrap();
            let c = sample_synthetic(&spec(class, 12)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert_eq!(a.label, Some(class.index()));
            assert_eq!(a.len(), 512);
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        assert!(sample_synthetic(&SyntheticSpec {
            points: 7,
            ..spec(ShapeClass::Cone, 0)
        })
        .is_err());
    }

    #[test]
    fn class_names_round_trip() {
        for class in ShapeClass::ALL {
            assert_eq!(class.name().parse::<ShapeClass>().unwrap(), class);
            assert_eq!(ShapeClass::from_index(class.index()), Some(class));
        }
    }
}
