use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::geometry::Aabb;

use super::PartitionError;

/// Symmetric V×V part adjacency with self-loops on non-empty parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    v: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn from_matrix(v: usize, cells: Vec<bool>) -> Result<Self, PartitionError> {
        if cells.len() != v * v {
            return Err(PartitionError::Size {
                what: "adjacency",
                expected: v * v,
                got: cells.len(),
            });
        }
        for i in 0..v {
            for j in i + 1..v {
                if cells[i * v + j] != cells[j * v + i] {
                    return Err(PartitionError::Asymmetric(i, j));
                }
            }
        }
        Ok(Self { v, cells })
    }

    pub fn len(&self) -> usize {
        self.v
    }

    pub fn is_empty(&self) -> bool {
        self.v == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.v + j]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// A node takes part in the graph iff it carries its self-loop.
    pub fn is_node(&self, i: usize) -> bool {
        self.get(i, i)
    }

    pub fn edge_count(&self) -> usize {
        (0..self.v)
            .flat_map(|i| (i + 1..self.v).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .count()
    }
}

/// Edge between two non-empty parts iff their boxes intersect; every
/// non-empty part also links to itself.
pub fn build_adjacency(boxes: &[Aabb], nonempty: &[bool]) -> Result<Adjacency, PartitionError> {
    let v = boxes.len();
    if nonempty.len() != v {
        return Err(PartitionError::Size {
            what: "nonempty mask",
            expected: v,
            got: nonempty.len(),
        });
    }
    let mut cells = vec![false; v * v];
    for i in 0..v {
        if !nonempty[i] {
            continue;
        }
        cells[i * v + i] = true;
        for j in i + 1..v {
            if nonempty[j] && boxes[i].intersects(&boxes[j]) {
                cells[i * v + j] = true;
                cells[j * v + i] = true;
            }
        }
    }
    Ok(Adjacency { v, cells })
}

/// Ground-truth hop distances between parts.
///
/// Entries are meaningful only where `valid` is set, i.e. both parts are
/// non-empty. Valid pairs take values in `0..=delta`; pairs farther than
/// `delta` hops or disconnected are stored as `delta`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMatrix {
    v: usize,
    delta: usize,
    dist: Vec<usize>,
    valid: Vec<bool>,
}

impl HopMatrix {
    pub fn num_parts(&self) -> usize {
        self.v
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Grid split implied by `delta = split + 1`.
    pub fn split(&self) -> usize {
        self.delta - 1
    }

    /// Number of hop classes, `delta + 1`.
    pub fn num_classes(&self) -> usize {
        self.delta + 1
    }

    pub fn dist(&self, i: usize, j: usize) -> usize {
        self.dist[i * self.v + j]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.v + j]
    }

    pub fn distances(&self) -> &[usize] {
        &self.dist
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Flat `i·V + j` indices of valid ordered pairs, ascending.
    pub fn valid_pairs(&self) -> Vec<usize> {
        (0..self.v * self.v).filter(|&k| self.valid[k]).collect()
    }

    /// `V,s,delta` on the first line followed by V rows of V integers, with
    /// `-1` for invalid pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},{},{}", self.v, self.split(), self.delta);
        for i in 0..self.v {
            let row: Vec<String> = (0..self.v)
                .map(|j| {
                    if self.is_valid(i, j) {
                        self.dist(i, j).to_string()
                    } else {
                        "-1".to_string()
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PartitionError> {
        let bad = |got| PartitionError::Size {
            what: "hop csv",
            expected: 0,
            got,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or(bad(0))?
            .split(',')
            .map(|f| f.trim().parse().map_err(|_| bad(0)))
            .collect::<Result<_, _>>()?;
        let [v, split, delta] = header[..] else {
            return Err(bad(header.len()));
        };
        if delta != split + 1 {
            return Err(bad(delta));
        }
        let mut dist = Vec::with_capacity(v * v);
        let mut valid = Vec::with_capacity(v * v);
        for line in lines {
            for field in line.split(',') {
                let x: i64 = field.trim().parse().map_err(|_| bad(dist.len()))?;
                valid.push(x >= 0);
                dist.push(if x >= 0 { x as usize } else { delta });
            }
        }
        if dist.len() != v * v {
            return Err(PartitionError::Size {
                what: "hop csv",
                expected: v * v,
                got: dist.len(),
            });
        }
        Ok(Self {
            v,
            delta,
            dist,
            valid,
        })
    }
}

/// Breadth-first search from every graph node, truncated at `delta`.
pub fn hop_distances(adjacency: &Adjacency, delta: usize) -> Result<HopMatrix, PartitionError> {
    let v = adjacency.len();
    let mut dist = vec![delta; v * v];
    let mut valid = vec![false; v * v];
    let mut queue = VecDeque::with_capacity(v);
    let mut seen = vec![usize::MAX; v];
    for src in (0..v).filter(|&i| adjacency.is_node(i)) {
        for dst in (0..v).filter(|&j| adjacency.is_node(j)) {
            valid[src * v + dst] = true;
        }
        seen.iter_mut().for_each(|d| *d = usize::MAX);
        seen[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = seen[u];
            if du >= delta {
                continue;
            }
            for w in 0..v {
                if w != u && adjacency.get(u, w) && seen[w] == usize::MAX {
                    seen[w] = du + 1;
                    queue.push_back(w);
                }
            }
        }
        for dst in 0..v {
            if seen[dst] != usize::MAX {
                dist[src * v + dst] = seen[dst].min(delta);
            }
        }
    }
    Ok(HopMatrix {
        v,
        delta,
        dist,
        valid,
    })
}
