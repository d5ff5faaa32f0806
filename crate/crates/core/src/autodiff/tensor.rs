use std::fmt;

use super::TensorError;

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDimension { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Leading dimensions multiplied together, and the last dimension.
    pub fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("rank >= 1");
        (self.data.len() / cols, cols)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for dim {d}");
            acc * d + i
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.rows_cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    #[allow(clippy::eq_op)]
    pub fn is_finite(&self) -> bool {
        // x - x is 0 for finite x and NaN otherwise; the branch-free sum
        // vectorizes, unlike a short-circuiting scan
        let mut acc = [0.0f64; 4];
        let mut chunks = self.data.chunks_exact(4);
        for c in &mut chunks {
            for l in 0..4 {
                acc[l] += c[l] - c[l];
            }
        }
        let tail: f64 = chunks.remainder().iter().map(|x| x - x).sum();
        (acc[0] + acc[1] + acc[2] + acc[3] + tail) == 0.0
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scaled_add_assign(&mut self, other: &Tensor, s: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// `a (m×k) · b (k×n)` into a fresh buffer.
///
/// Every output element sums its k products in ascending order, so the
/// result does not depend on the blocking below.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    const R: usize = 4;
    const W: usize = 8;
    let mut out = vec![0.0; m * n];
    let full_rows = m - m % R;
    let full_cols = n - n % W;
    for i in (0..full_rows).step_by(R) {
        for j in (0..full_cols).step_by(W) {
            let mut acc = [[0.0; W]; R];
            for p in 0..k {
                let bw: &[f64; W] = b[p * n + j..p * n + j + W].try_into().expect("width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (c, &bv) in row.iter_mut().zip(bw) {
                        *c += av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(row);
            }
        }
        if full_cols < n {
            for r in i..i + R {
                edge_row(a, b, k, n, r, full_cols, &mut out[r * n..(r + 1) * n]);
            }
        }
    }
    for r in full_rows..m {
        edge_row(a, b, k, n, r, 0, &mut out[r * n..(r + 1) * n]);
    }
    out
}

/// Columns `from..n` of output row `r`, accumulated row by row.
fn edge_row(a: &[f64], b: &[f64], k: usize, n: usize, r: usize, from: usize, crow: &mut [f64]) {
    let crow = &mut crow[from..];
    for p in 0..k {
        let av = a[r * k + p];
        for (c, &bv) in crow.iter_mut().zip(&b[p * n + from..(p + 1) * n]) {
            *c += av * bv;
        }
    }
}

fn transposed(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for (r, row) in a.chunks_exact(cols).enumerate() {
        for (c, &x) in row.iter().enumerate() {
            out[c * rows + r] = x;
        }
    }
    out
}

/// `aᵀ · b` where `a` is m×k and `b` is m×n; result k×n.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_raw(&transposed(a, m, k), b, k, m, n)
}

/// `a · bᵀ` where `a` is m×n and `b` is k×n; result m×k.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    matmul_raw(a, &transposed(b, k, n), m, n, k)
}
