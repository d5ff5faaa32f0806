use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    None,
    /// Uniform angle in [0, 2π) about the z axis.
    Z,
    /// Uniform over SO(3).
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation: Rotation,
    /// Per-axis scale factors are drawn uniformly from `[lo, hi]`.
    pub scale: (f64, f64),
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::None,
            scale: (1.0, 1.0),
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }

    /// z rotation, scale in [0.8, 1.2], jitter σ = 0.01 clipped at 0.02.
    pub fn pretraining() -> Self {
        Self {
            rotation: Rotation::Z,
            scale: (0.8, 1.2),
            jitter_sigma: 0.01,
            jitter_clip: 0.02,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let (lo, hi) = self.scale;
        if !(lo <= hi) || lo <= 0.0 {
            return Err(GeometryError::Invalid(format!("scale range [{lo}, {hi}]")));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.jitter_clip >= 0.0) {
            return Err(GeometryError::Invalid(
                "jitter sigma and clip must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

fn rotation_matrix<R: Rng + ?Sized>(mode: Rotation, rng: &mut R) -> Option<Mat3> {
    match mode {
        Rotation::None => None,
        Rotation::Z => {
            let t = rng.random_range(0.0..2.0 * PI);
            let (s, c) = t.sin_cos();
            Some([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        }
        Rotation::Full => {
            // uniform unit quaternion (Shoemake)
            let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let (w, x, y, z) = (
                a * (2.0 * PI * u2).sin(),
                a * (2.0 * PI * u2).cos(),
                b * (2.0 * PI * u3).sin(),
                b * (2.0 * PI * u3).cos(),
            );
            Some([
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - z * w),
                    2.0 * (x * z + y * w),
                ],
                [
                    2.0 * (x * y + z * w),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - x * w),
                ],
                [
                    2.0 * (x * z - y * w),
                    2.0 * (y * z + x * w),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ])
        }
    }
}

/// Rotation, then anisotropic scaling, then clipped Gaussian jitter.
pub fn augment<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<PointCloud, GeometryError> {
    params.validate()?;
    let rot = rotation_matrix(params.rotation, rng);
    let (lo, hi) = params.scale;
    let scale: [f64; 3] = if lo == hi {
        [lo; 3]
    } else {
        [0; 3].map(|_| rng.random_range(lo..=hi))
    };
    let jitter = (params.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, params.jitter_sigma).expect("sigma > 0"));
    let clip = params.jitter_clip;

    let mut points = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        let mut q = match &rot {
            Some(m) => [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2]),
            None => *p,
        };
        for k in 0..3 {
            q[k] *= scale[k];
        }
        if let Some(noise) = &jitter {
            for c in &mut q {
                *c += noise.sample(rng).clamp(-clip, clip);
            }
        }
        points.push(q);
    }
    PointCloud::new(points, cloud.label)
}
