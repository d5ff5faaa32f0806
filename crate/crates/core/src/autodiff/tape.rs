//! Operation recording and reverse-mode traversal.
//!
//! Every op appends one node holding its output value and whatever its
//! backward rule needs. Nodes are only ever appended, so inputs always precede
//! outputs and a single reverse sweep over the node list is a valid
//! topological traversal.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `mask` holds the branch taken per element when it came from a
    /// branch log rather than the sign of the input.
    LeakyRelu {
        input: Var,
        slope: f64,
        mask: Option<Vec<bool>>,
    },
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Sum(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    /// Flat input offset that produced each output element.
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    /// [`NO_ROW`] marks outputs of empty groups.
    SegmentMax {
        input: Var,
        argmax: Vec<usize>,
    },
    GatherMax {
        input: Var,
        argmax: Vec<usize>,
    },
    ConcatLast(Var, Var),
    SliceLast {
        input: Var,
        start: usize,
    },
    RepeatLast {
        input: Var,
        times: usize,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    /// Standardized input per column, and the inverse deviation of each
    /// column, both from the statistics of `rows` (every row when `None`).
    Normalize {
        input: Var,
        gamma: Var,
        beta: Var,
        rows: Option<Vec<usize>>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::ScaleRows(..) => "scale_rows",
            Op::Sum(_) => "sum",
            Op::MeanAxis { .. } => "mean_axis",
            Op::MaxAxis { .. } => "reduce_max",
            Op::SegmentMax { .. } => "segment_max",
            Op::GatherMax { .. } => "gather_max",
            Op::ConcatLast(..) => "concat_last",
            Op::SliceLast { .. } => "slice_last",
            Op::RepeatLast { .. } => "repeat_last",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::Softmax { .. } => "softmax_masked",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Dropout { .. } => "dropout",
            Op::Normalize { .. } => "normalize_columns",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Splits a shape around `axis` into (outer, axis length, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

/// Placeholder location for max outputs with nothing to choose from.
const NO_ROW: usize = usize::MAX;

/// Discrete choices made while evaluating a tape (max locations, leaky
/// ReLU branches, caller choices such as neighbor lists), in the order they
/// were taken.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Branches(Vec<Vec<usize>>);

impl Branches {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Default)]
enum BranchLog {
    #[default]
    Off,
    Record(Vec<Vec<usize>>),
    Replay {
        log: Vec<Vec<usize>>,
        next: usize,
    },
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    branches: BranchLog,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that logs every discrete choice; read them with
    /// [`Tape::branches`].
    pub fn recording() -> Self {
        Self {
            branches: BranchLog::Record(Vec::new()),
            ..Self::default()
        }
    }

    /// A tape that repeats logged choices instead of recomputing them, so a
    /// perturbed input is evaluated on the same smooth piece as the recorded
    /// one. Ops fail with [`TensorError::Replay`] when the computation does
    /// not line up with the log.
    pub fn replaying(branches: Branches) -> Self {
        Self {
            branches: BranchLog::Replay {
                log: branches.0,
                next: 0,
            },
            ..Self::default()
        }
    }

    /// Choices logged so far by a recording tape.
    pub fn branches(&self) -> Option<Branches> {
        match &self.branches {
            BranchLog::Record(log) => Some(Branches(log.clone())),
            _ => None,
        }
    }

    /// Routes a discrete choice through the branch log: recorded when
    /// recording, taken from the log when replaying, computed otherwise.
    pub fn choose(
        &mut self,
        op: &'static str,
        compute: impl FnOnce(&Self) -> Vec<usize>,
    ) -> Result<Vec<usize>, TensorError> {
        if let BranchLog::Replay { log, next } = &mut self.branches {
            let choice = log.get_mut(*next).ok_or(TensorError::Replay { op })?;
            *next += 1;
            return Ok(std::mem::take(choice));
        }
        let choice = compute(self);
        if let BranchLog::Record(log) = &mut self.branches {
            log.push(choice.clone());
        }
        Ok(choice)
    }

    /// Like [`Tape::choose`] for choices of a known length whose entries
    /// must stay below `bound`, or be [`NO_ROW`] where `empty_ok`.
    fn choose_checked(
        &mut self,
        op: &'static str,
        len: usize,
        bound: usize,
        empty_ok: bool,
        compute: impl FnOnce(&Self) -> Vec<usize>,
    ) -> Result<Vec<usize>, TensorError> {
        let choice = self.choose(op, compute)?;
        if choice.len() != len
            || choice
                .iter()
                .any(|&x| x >= bound && !(empty_ok && x == NO_ROW))
        {
            return Err(TensorError::Replay { op });
        }
        Ok(choice)
    }

    fn branches_off(&self) -> bool {
        matches!(self.branches, BranchLog::Off)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input value. Its gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<bool, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(false)
        } else if tb.is_scalar() {
            Ok(true)
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn zip_with(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = if broadcast {
            let s = tb.item();
            ta.data().iter().map(|&x| f(x, s)).collect()
        } else {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )
        .expect("shape preserved")
    }

    /// `a + b`; `b` may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let bc = self.binary_shapes("add", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let bc = self.binary_shapes("sub", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let bc = self.binary_shapes("mul", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.map(a, |x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, TensorError> {
        if self.branches_off() {
            let out = self.map(a, |x| if x > 0.0 { x } else { slope * x });
            return self.push(
                out,
                Op::LeakyRelu {
                    input: a,
                    slope,
                    mask: None,
                },
            );
        }
        let n = self.value(a).numel();
        let mask = self.choose_checked("leaky_relu", n, 2, false, |t| {
            t.value(a)
                .data()
                .iter()
                .map(|&x| usize::from(x > 0.0))
                .collect()
        })?;
        let mask: Vec<bool> = mask.into_iter().map(|m| m == 1).collect();
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &pos)| if pos { x } else { slope * x })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(
            out,
            Op::LeakyRelu {
                input: a,
                slope,
                mask: Some(mask),
            },
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.dim(0), ta.dim(1), tb.dim(1));
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a length-n bias to every row of an m×n tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, cols) = tx.rows_cols();
        if tx.rank() != 2 || tb.numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(out, Op::AddBias(x, bias))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Multiplies row r of an m×n tensor by `s[r]`, where `s` has m elements.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (rows, cols) = tx.rows_cols();
        if ts.numel() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: tx.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let sv = ts.data();
        let data = tx
            .data()
            .chunks(cols)
            .zip(sv)
            .flat_map(|(row, &f)| row.iter().map(move |x| x * f))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(out, Op::ScaleRows(x, s))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(), TensorError> {
        let rank = self.value(a).rank();
        if axis >= rank {
            Err(TensorError::InvalidAxis { op, axis, rank })
        } else {
            Ok(())
        }
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("mean_axis", a, axis)?;
        let ta = self.value(a);
        let (outer, len, inner) = axis_split(ta.shape(), axis);
        let src = ta.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|x| *x *= inv);
        let out = Tensor::new(reduced_shape(ta.shape(), axis), data)?;
        self.push(out, Op::MeanAxis { input: a, axis })
    }

    /// Componentwise max along `axis`. Ties resolve to the lowest index, which
    /// alone receives the gradient.
    pub fn reduce_max(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("reduce_max", a, axis)?;
        let (outer, len, inner) = axis_split(self.shape(a), axis);
        let numel = self.value(a).numel();
        let argmax = self.choose_checked("reduce_max", outer * inner, numel, false, |t| {
            let src = t.value(a).data();
            let mut argmax = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = o * len * inner + i;
                    for l in 1..len {
                        let off = (o * len + l) * inner + i;
                        if src[off] > src[best] {
                            best = off;
                        }
                    }
                    argmax.push(best);
                }
            }
            argmax
        })?;
        let ta = self.value(a);
        let data = argmax.iter().map(|&off| ta.data()[off]).collect();
        let out = Tensor::new(reduced_shape(ta.shape(), axis), data)?;
        self.push(out, Op::MaxAxis { input: a, argmax })
    }

    /// Componentwise max over consecutive groups of `group` gathered rows:
    /// output row g is the max of rows `index[g·group..(g+1)·group]` of the
    /// m×n input. Ties resolve to the earliest listed row.
    pub fn gather_max(
        &mut self,
        a: Var,
        index: &[usize],
        group: usize,
    ) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (rows, cols) = ta.rows_cols();
        if group == 0 || index.is_empty() || !index.len().is_multiple_of(group) {
            return Err(TensorError::EmptyReduction { op: "gather_max" });
        }
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(TensorError::InvalidIndex {
                op: "gather_max",
                index: bad,
                len: rows,
            });
        }
        let outputs = index.len() / group * cols;
        let argmax = self.choose_checked("gather_max", outputs, rows * cols, false, |t| {
            let src = t.value(a).data();
            let mut best = Vec::with_capacity(outputs);
            let mut argmax = Vec::with_capacity(outputs);
            for members in index.chunks_exact(group) {
                let first = members[0] * cols;
                let start = best.len();
                best.extend_from_slice(&src[first..first + cols]);
                argmax.extend(first..first + cols);
                for &r in &members[1..] {
                    let row = &src[r * cols..(r + 1) * cols];
                    let slots = best[start..].iter_mut().zip(&mut argmax[start..]);
                    for (c, ((b, at), &x)) in slots.zip(row).enumerate() {
                        if x > *b {
                            *b = x;
                            *at = r * cols + c;
                        }
                    }
                }
            }
            argmax
        })?;
        let src = self.value(a).data();
        let data = argmax.iter().map(|&off| src[off]).collect();
        let out = Tensor::new(vec![index.len() / group, cols], data)?;
        self.push(out, Op::GatherMax { input: a, argmax })
    }

    /// Row-wise max over index groups of an m×n tensor. Output row g is the
    /// componentwise max over rows `segments[g]`; empty groups yield `fill`.
    /// Ties resolve to the earliest row listed in the group.
    pub fn segment_max(
        &mut self,
        a: Var,
        segments: &[Vec<usize>],
        fill: f64,
    ) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (rows, cols) = ta.rows_cols();
        if segments.is_empty() {
            return Err(TensorError::EmptyReduction { op: "segment_max" });
        }
        if let Some(&bad) = segments.iter().flatten().find(|&&r| r >= rows) {
            return Err(TensorError::InvalidIndex {
                op: "segment_max",
                index: bad,
                len: rows,
            });
        }
        let argmax = self.choose_checked(
            "segment_max",
            segments.len() * cols,
            rows * cols,
            true,
            |t| {
                let src = t.value(a).data();
                let mut argmax = Vec::with_capacity(segments.len() * cols);
                for seg in segments {
                    match seg.split_first() {
                        None => argmax.extend(std::iter::repeat_n(NO_ROW, cols)),
                        Some((&first, rest)) => {
                            for c in 0..cols {
                                let mut best = first * cols + c;
                                for &r in rest {
                                    let off = r * cols + c;
                                    if src[off] > src[best] {
                                        best = off;
                                    }
                                }
                                argmax.push(best);
                            }
                        }
                    }
                }
                argmax
            },
        )?;
        let src = self.value(a).data();
        let data = argmax
            .iter()
            .map(|&off| if off == NO_ROW { fill } else { src[off] })
            .collect();
        let out = Tensor::new(vec![segments.len(), cols], data)?;
        self.push(out, Op::SegmentMax { input: a, argmax })
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (rows, ca) = ta.rows_cols();
        let (_, cb) = tb.rows_cols();
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::ConcatLast(a, b))
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (rows, cols) = ta.rows_cols();
        if len == 0 || start + len > cols {
            return Err(TensorError::InvalidIndex {
                op: "slice_last",
                index: start + len,
                len: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::SliceLast { input: a, start })
    }

    /// Repeats every last-axis element `times` times in place:
    /// `[a, b] -> [a, a, b, b]` for `times = 2`.
    pub fn repeat_last(&mut self, a: Var, times: usize) -> Result<Var, TensorError> {
        if times == 0 {
            return Err(TensorError::InvalidIndex {
                op: "repeat_last",
                index: 0,
                len: 0,
            });
        }
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, times))
            .collect();
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() *= times;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::RepeatLast { input: a, times })
    }

    /// Selects rows (over the flattened leading dimensions) by index.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (rows, cols) = ta.rows_cols();
        if index.is_empty() {
            return Err(TensorError::EmptyReduction { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in index {
            if r >= rows {
                return Err(TensorError::InvalidIndex {
                    op: "gather_rows",
                    index: r,
                    len: rows,
                });
            }
            data.extend_from_slice(ta.row(r));
        }
        let out = Tensor::new(vec![index.len(), cols], data)?;
        self.push(
            out,
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = ta.reshaped(shape)?;
        self.push(out, Op::Reshape(a))
    }

    fn softmax_impl(
        &mut self,
        a: Var,
        mask: Option<&[bool]>,
        axis: usize,
        zero_empty: bool,
    ) -> Result<Var, TensorError> {
        self.check_axis("softmax_masked", a, axis)?;
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_masked",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let keep = |off: usize| mask.is_none_or(|m| m[off]);
        let (outer, len, inner) = axis_split(ta.shape(), axis);
        let src = ta.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let offs = (0..len).map(|l| (o * len + l) * inner + i);
                let top = offs
                    .clone()
                    .filter(|&off| keep(off))
                    .map(|off| src[off])
                    .fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    if zero_empty {
                        continue;
                    }
                    return Err(TensorError::FullyMasked {
                        slice: o * inner + i,
                    });
                }
                let mut denom = 0.0;
                for off in offs.clone().filter(|&off| keep(off)) {
                    let e = (src[off] - top).exp();
                    data[off] = e;
                    denom += e;
                }
                for off in offs.filter(|&off| keep(off)) {
                    data[off] /= denom;
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Softmax { input: a, axis })
    }

    /// Softmax along `axis` over entries where `mask` is true; masked entries
    /// are exactly zero. `None` means no masking. A slice with no unmasked
    /// entry is an error.
    pub fn softmax_masked(
        &mut self,
        a: Var,
        mask: Option<&[bool]>,
        axis: usize,
    ) -> Result<Var, TensorError> {
        self.softmax_impl(a, mask, axis, false)
    }

    /// Like [`Tape::softmax_masked`], but fully masked slices become all zero.
    pub fn softmax_masked_or_zero(
        &mut self,
        a: Var,
        mask: &[bool],
        axis: usize,
    ) -> Result<Var, TensorError> {
        self.softmax_impl(a, Some(mask), axis, true)
    }

    /// Mean over rows of `-log softmax(row)[target]`. Rows are the flattened
    /// leading dimensions of `logits`.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        let (rows, k) = tl.rows_cols();
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::ClassOutOfRange {
                class: bad,
                classes: k,
            });
        }
        let mut probs = Vec::with_capacity(rows * k);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row(r);
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - top).exp()).sum();
            let log_denom = denom.ln();
            total += log_denom - (row[t] - top);
            probs.extend(row.iter().map(|x| (x - top).exp() / denom));
        }
        let loss = total / rows as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate { rate });
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let ta = self.value(a);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { input: a, mask })
    }

    /// Standardizes every column of an m×n tensor with the mean and
    /// variance of the selected rows (all rows when `rows` is `None`), then
    /// applies the per-column scale `gamma` and shift `beta`. Unselected
    /// rows are transformed with the same statistics.
    pub fn normalize_columns(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        rows: Option<&[usize]>,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (m, n) = tx.rows_cols();
        for t in [self.value(gamma), self.value(beta)] {
            if tx.rank() != 2 || t.numel() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "normalize_columns",
                    lhs: tx.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if let Some(&bad) = rows.into_iter().flatten().find(|&&r| r >= m) {
            return Err(TensorError::InvalidIndex {
                op: "normalize_columns",
                index: bad,
                len: m,
            });
        }
        let count = rows.map_or(m, <[usize]>::len);
        if count == 0 {
            return Err(TensorError::EmptyReduction {
                op: "normalize_columns",
            });
        }
        let data = tx.data();
        let selected = |r: usize| &data[r * n..(r + 1) * n];
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        let each = |f: &mut dyn FnMut(&[f64])| match rows {
            Some(rs) => rs.iter().for_each(|&r| f(selected(r))),
            None => (0..m).for_each(|r| f(selected(r))),
        };
        each(&mut |row| mean.iter_mut().zip(row).for_each(|(a, x)| *a += x));
        mean.iter_mut().for_each(|a| *a /= count as f64);
        each(&mut |row| {
            for ((a, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (x - mu) * (x - mu);
            }
        });
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v / count as f64 + eps).sqrt())
            .collect();
        let xhat: Vec<f64> = data
            .chunks(n)
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&inv_std)
                    .map(|((x, mu), s)| (x - mu) * s)
            })
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = xhat
            .chunks(n)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((x, g), b)| g * x + b))
            .collect();
        let out = Tensor::new(vec![m, n], out)?;
        self.push(
            out,
            Op::Normalize {
                input: x,
                gamma,
                beta,
                rows: rows.map(<[usize]>::to_vec),
                xhat,
                inv_std,
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let mut params: Vec<(ParamId, Tensor)> = Vec::new();
        for (idx, g) in grads.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&self.nodes[idx].op, g) {
                match params.iter_mut().find(|(pid, _)| pid == id) {
                    Some((_, acc)) => acc.add_assign(g),
                    None => params.push((*id, g.clone())),
                }
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients {
            leaves: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                accumulate(grads, *a, g.clone());
                let gb = if val(*b).shape() == g.shape() {
                    Tensor::new(g.shape().to_vec(), gd.iter().map(|x| sign * x).collect()).unwrap()
                } else {
                    Tensor::new(
                        val(*b).shape().to_vec(),
                        vec![sign * gd.iter().sum::<f64>()],
                    )
                    .unwrap()
                };
                accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ta.shape() == tb.shape() {
                    let ga = zip_map(gd, tb.data(), |g, y| g * y);
                    let gb = zip_map(gd, ta.data(), |g, x| g * x);
                    accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                    accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
                } else {
                    let s = tb.item();
                    let ga = gd.iter().map(|g| g * s).collect();
                    let gb: f64 = gd.iter().zip(ta.data()).map(|(g, x)| g * x).sum();
                    accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                    accumulate(
                        grads,
                        *b,
                        Tensor::new(tb.shape().to_vec(), vec![gb]).unwrap(),
                    );
                }
            }
            Op::Scale(a, f) => {
                let ga = gd.iter().map(|g| g * f).collect();
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::LeakyRelu { input, slope, mask } => {
                let ga = match mask {
                    None => zip_map(
                        gd,
                        val(*input).data(),
                        |g, x| if x > 0.0 { g } else { slope * g },
                    ),
                    Some(m) => gd
                        .iter()
                        .zip(m)
                        .map(|(&g, &pos)| if pos { g } else { slope * g })
                        .collect(),
                };
                accumulate(grads, *input, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::Exp(a) => {
                let ga = zip_map(gd, node.value.data(), |g, y| g * y);
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::Log(a) => {
                let ga = zip_map(gd, val(*a).data(), |g, x| g / x);
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.dim(0), ta.dim(1), tb.dim(1));
                let ga = matmul_nt(gd, tb.data(), m, n, k);
                let gb = matmul_tn(ta.data(), gd, m, k, n);
                accumulate(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                accumulate(grads, *b, Tensor::new(vec![k, n], gb).unwrap());
            }
            Op::AddBias(x, b) => {
                let (_, cols) = g.rows_cols();
                let mut gb = vec![0.0; cols];
                for row in gd.chunks(cols) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(
                    grads,
                    *b,
                    Tensor::new(val(*b).shape().to_vec(), gb).unwrap(),
                );
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (val(*x), val(*s));
                let (_, cols) = tx.rows_cols();
                let sv = ts.data();
                let mut gx = Vec::with_capacity(gd.len());
                let mut gs = vec![0.0; sv.len()];
                for (r, (grow, xrow)) in gd.chunks(cols).zip(tx.data().chunks(cols)).enumerate() {
                    gx.extend(grow.iter().map(|g| g * sv[r]));
                    gs[r] = grow.iter().zip(xrow).map(|(g, x)| g * x).sum();
                }
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), gx).unwrap());
                accumulate(grads, *s, Tensor::new(ts.shape().to_vec(), gs).unwrap());
            }
            Op::Sum(a) => {
                let ta = val(*a);
                accumulate(grads, *a, Tensor::full(ta.shape(), g.item()));
            }
            Op::MeanAxis { input, axis } => {
                let ti = val(*input);
                let (outer, len, inner) = axis_split(ti.shape(), *axis);
                let inv = 1.0 / len as f64;
                let mut gi = vec![0.0; ti.numel()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gi[(o * len + l) * inner + i] = gd[o * inner + i] * inv;
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::MaxAxis { input, argmax } | Op::GatherMax { input, argmax } => {
                let ti = val(*input);
                let mut gi = vec![0.0; ti.numel()];
                for (&off, &gv) in argmax.iter().zip(gd) {
                    gi[off] += gv;
                }
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::SegmentMax { input, argmax } => {
                let ti = val(*input);
                let mut gi = vec![0.0; ti.numel()];
                for (&off, &gv) in argmax.iter().zip(gd) {
                    if off != NO_ROW {
                        gi[off] += gv;
                    }
                }
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::ConcatLast(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (_, ca) = ta.rows_cols();
                let (_, cb) = tb.rows_cols();
                let mut ga = Vec::with_capacity(ta.numel());
                let mut gb = Vec::with_capacity(tb.numel());
                for row in gd.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
            }
            Op::SliceLast { input, start } => {
                let ti = val(*input);
                let (_, cols) = ti.rows_cols();
                let (_, len) = g.rows_cols();
                let mut gi = vec![0.0; ti.numel()];
                for (r, grow) in gd.chunks(len).enumerate() {
                    gi[r * cols + start..r * cols + start + len].copy_from_slice(grow);
                }
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::RepeatLast { input, times } => {
                let ti = val(*input);
                let gi = gd.chunks(*times).map(|c| c.iter().sum()).collect();
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::GatherRows { input, index } => {
                let ti = val(*input);
                let (_, cols) = ti.rows_cols();
                let mut gi = vec![0.0; ti.numel()];
                for (grow, &r) in gd.chunks(cols).zip(index) {
                    for (acc, v) in gi[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                        *acc += v;
                    }
                }
                accumulate(grads, *input, Tensor::new(ti.shape().to_vec(), gi).unwrap());
            }
            Op::Reshape(a) => {
                let ta = val(*a);
                accumulate(grads, *a, g.reshaped(ta.shape()).unwrap());
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gi = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let offs = (0..len).map(|l| (o * len + l) * inner + i);
                        let dot: f64 = offs.clone().map(|off| y[off] * gd[off]).sum();
                        for off in offs {
                            gi[off] = y[off] * (gd[off] - dot);
                        }
                    }
                }
                accumulate(
                    grads,
                    *input,
                    Tensor::new(node.value.shape().to_vec(), gi).unwrap(),
                );
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let tl = val(*logits);
                let (rows, k) = tl.rows_cols();
                let scale = g.item() / rows as f64;
                let mut gi: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gi[r * k + t] -= scale;
                }
                accumulate(
                    grads,
                    *logits,
                    Tensor::new(tl.shape().to_vec(), gi).unwrap(),
                );
            }
            Op::Dropout { input, mask } => {
                let gi = zip_map(gd, mask, |g, m| g * m);
                accumulate(grads, *input, Tensor::new(g.shape().to_vec(), gi).unwrap());
            }
            Op::Normalize {
                input,
                gamma,
                beta,
                rows,
                xhat,
                inv_std,
            } => {
                let (m, n) = g.rows_cols();
                let gam = val(*gamma).data();
                let mut g_gamma = vec![0.0; n];
                let mut g_beta = vec![0.0; n];
                // Column sums of the gradient reaching x̂, plain and weighted by x̂.
                let mut sum = vec![0.0; n];
                let mut dot = vec![0.0; n];
                for (grow, xrow) in gd.chunks(n).zip(xhat.chunks(n)) {
                    for c in 0..n {
                        g_gamma[c] += grow[c] * xrow[c];
                        g_beta[c] += grow[c];
                        sum[c] += grow[c] * gam[c];
                        dot[c] += grow[c] * gam[c] * xrow[c];
                    }
                }
                let mut gi: Vec<f64> = (0..m * n)
                    .map(|e| gd[e] * gam[e % n] * inv_std[e % n])
                    .collect();
                let count = rows.as_ref().map_or(m, Vec::len) as f64;
                let mut stat = |r: usize| {
                    for c in 0..n {
                        let e = r * n + c;
                        gi[e] -= inv_std[c] * (sum[c] + xhat[e] * dot[c]) / count;
                    }
                };
                match rows {
                    Some(rs) => rs.iter().for_each(|&r| stat(r)),
                    None => (0..m).for_each(&mut stat),
                }
                let shape_of = |v: Var| val(v).shape().to_vec();
                accumulate(grads, *input, Tensor::new(vec![m, n], gi).unwrap());
                accumulate(
                    grads,
                    *gamma,
                    Tensor::new(shape_of(*gamma), g_gamma).unwrap(),
                );
                accumulate(grads, *beta, Tensor::new(shape_of(*beta), g_beta).unwrap());
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter var, if the root depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Summed gradient per parameter, in ascending id order.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g)
    }

    /// Adds `scale` times these gradients to the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (id, g) in &self.params {
            store.grad_mut(*id).scaled_add_assign(g, scale);
        }
    }
}

/// Reverse sweep from `root`, accumulating parameter gradients into `params`.
pub fn backward(tape: &Tape, root: Var, params: &mut ParamStore) -> Result<(), TensorError> {
    let grads = tape.backward(root)?;
    grads.accumulate_into(params, 1.0);
    Ok(())
}
