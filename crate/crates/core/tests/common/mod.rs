//! Independent reference implementations used by the acceptance suite.
//! They follow the definitions directly and share no code with the
//! library's partition module.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Point = [f64; 3];

/// Cell of every point in an s×s×s grid over the cloud's bounding cube:
/// the cube has the largest box extent as side and shares the box center;
/// indices are floored and clamped, flattened x-major.
pub fn voxel_cells(points: &[Point], s: usize) -> Vec<usize> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let side = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let origin: Point = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0 - side / 2.0);
    points
        .iter()
        .map(|p| {
            let idx = [0, 1, 2].map(|k| {
                if side == 0.0 {
                    return 0;
                }
                let t = ((p[k] - origin[k]) * s as f64 / side).floor();
                (t.max(0.0) as usize).min(s - 1)
            });
            (idx[0] * s + idx[1]) * s + idx[2]
        })
        .collect()
}

/// Closed box per axis as `(lo, hi)` intervals.
pub type Intervals = [(f64, f64); 3];

/// Tight box of each occupied cell scaled about its center; `None` for
/// empty cells.
pub fn cell_boxes(
    points: &[Point],
    cells: &[usize],
    v: usize,
    factor: f64,
) -> Vec<Option<Intervals>> {
    let mut boxes: Vec<Option<Intervals>> = vec![None; v];
    for (p, &c) in points.iter().zip(cells) {
        let b = boxes[c].get_or_insert([(p[0], p[0]), (p[1], p[1]), (p[2], p[2])]);
        for k in 0..3 {
            b[k].0 = b[k].0.min(p[k]);
            b[k].1 = b[k].1.max(p[k]);
        }
    }
    boxes
        .into_iter()
        .map(|b| {
            b.map(|b| {
                b.map(|(lo, hi)| {
                    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0 * factor);
                    (mid - half, mid + half)
                })
            })
        })
        .collect()
}

/// Two boxes touch when their closed intervals overlap on each axis
/// separately. Empty cells have no edges; occupied cells link to
/// themselves.
pub fn naive_adjacency(boxes: &[Option<Intervals>]) -> Vec<bool> {
    let v = boxes.len();
    let mut adj = vec![false; v * v];
    for i in 0..v {
        for j in 0..v {
            if let (Some(a), Some(b)) = (&boxes[i], &boxes[j]) {
                let x = a[0].0 <= b[0].1 && b[0].0 <= a[0].1;
                let y = a[1].0 <= b[1].1 && b[1].0 <= a[1].1;
                let z = a[2].0 <= b[2].1 && b[2].0 <= a[2].1;
                adj[i * v + j] = x && y && z;
            }
        }
    }
    adj
}

/// All-pairs shortest hop counts between occupied nodes, with anything
/// longer than `delta` or unreachable reported as `delta`. Entries for
/// empty nodes are `None`.
pub fn floyd_warshall(adj: &[bool], v: usize, delta: usize) -> Vec<Option<usize>> {
    let node: Vec<bool> = (0..v).map(|i| adj[i * v + i]).collect();
    let inf = usize::MAX / 4;
    let mut d = vec![inf; v * v];
    for i in 0..v {
        for j in 0..v {
            if i == j && node[i] {
                d[i * v + j] = 0;
            } else if adj[i * v + j] {
                d[i * v + j] = 1;
            }
        }
    }
    for k in 0..v {
        for i in 0..v {
            for j in 0..v {
                let via = d[i * v + k] + d[k * v + j];
                if via < d[i * v + j] {
                    d[i * v + j] = via;
                }
            }
        }
    }
    (0..v * v)
        .map(|r| (node[r / v] && node[r % v]).then(|| d[r].min(delta)))
        .collect()
}

/// 512-ish points drawn from one to four Gaussian blobs, which leaves empty
/// cells and sometimes separate components.
pub fn blob_cloud(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = rng.random_range(1..=4);
    let centers: Vec<Point> = (0..blobs)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let spreads: Vec<f64> = (0..blobs).map(|_| rng.random_range(0.02..0.4)).collect();
    (0..n)
        .map(|_| {
            let b = rng.random_range(0..blobs);
            let noise = Normal::new(0.0, spreads[b]).unwrap();
            [0, 1, 2].map(|k| centers[b][k] + noise.sample(&mut rng))
        })
        .collect()
}

/// Kernel reference: Gaussian of width `sigma2` under the standard normal's
/// normalizing constant, so the peak is 1/√(2π) for every width.
pub fn hop_kernel(x: f64, sigma2: f64) -> f64 {
    (-x * x / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
