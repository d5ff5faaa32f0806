//! Building blocks of one hop-graph layer, each recorded on a [`Tape`].
//!
//! Pair tensors over the complete part graph are stored as `V²` rows with
//! row `i·V + j` holding the ordered pair `(i, j)`.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::geometry::knn;
use crate::partition::{HopMatrix, Partition};

use super::KernelMode;

/// Dense layer `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.insert_kaiming(&format!("{name}.w"), &[inputs, outputs], inputs, rng)?;
        let b = store.insert_uniform(&format!("{name}.b"), &[outputs], inputs, rng)?;
        Ok(Self { w, b })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.linear(x, w, b)?)
    }
}

/// Per-column standardization of one sample's rows with a learned scale
/// and shift, initialized to the identity map on standardized input.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// Added to the variance before taking its root.
pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        let gamma = store.insert(&format!("{name}.gamma"), Tensor::full(&[width], 1.0))?;
        let beta = store.insert(&format!("{name}.beta"), Tensor::zeros(&[width]))?;
        Ok(Self { gamma, beta })
    }

    /// Statistics come from `rows` (every row when `None`).
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        rows: Option<&[usize]>,
    ) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        Ok(tape.normalize_columns(x, gamma, beta, rows, NORM_EPS)?)
    }
}

/// Optional normalization followed by leaky ReLU.
fn activate(
    tape: &mut Tape,
    store: &ParamStore,
    norm: Option<&Norm>,
    pre: Var,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let pre = match norm {
        Some(n) => n.apply(tape, store, pre, rows)?,
        None => pre,
    };
    Ok(tape.leaky_relu(pre, LEAKY_SLOPE)?)
}

/// Weights of a shared map on `[x_i, x_j - x_i]`, split into the part
/// applied to the center and the part applied to the difference.
#[derive(Clone, Copy, Debug)]
pub struct PairLinear {
    pub w_center: ParamId,
    pub w_delta: ParamId,
    pub b: ParamId,
}

impl PairLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = 2 * inputs;
        let w_center =
            store.insert_kaiming(&format!("{name}.w_center"), &[inputs, outputs], fan_in, rng)?;
        let w_delta =
            store.insert_kaiming(&format!("{name}.w_delta"), &[inputs, outputs], fan_in, rng)?;
        let b = store.insert_uniform(&format!("{name}.b"), &[outputs], fan_in, rng)?;
        Ok(Self {
            w_center,
            w_delta,
            b,
        })
    }

    /// Pre-activations for rows `(centers[r], others[r])` without
    /// materializing the concatenated pair features:
    /// `[x_i, x_j - x_i]·W = x_i·(W_c - W_d) + x_j·W_d`.
    pub fn apply_pairs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        centers: &[usize],
        others: &[usize],
    ) -> Result<Var> {
        let wc = tape.param(store, self.w_center);
        let wd = tape.param(store, self.w_delta);
        let b = tape.param(store, self.b);
        let w_self = tape.sub(wc, wd)?;
        let own = tape.linear(x, w_self, b)?;
        let other = tape.matmul(x, wd)?;
        let own = tape.gather_rows(own, centers)?;
        let other = tape.gather_rows(other, others)?;
        Ok(tape.add(own, other)?)
    }
}

/// The k nearest neighbors (self included) of every row of `h` in feature
/// space, N·k indices.
pub fn feature_neighbors(tape: &mut Tape, h: Var, k: usize) -> Result<Vec<usize>> {
    let n = tape.shape(h)[0];
    let mut failure = None;
    let neighbors = tape.choose("knn", |t| {
        let x = t.value(h);
        let (_, dim) = x.rows_cols();
        knn(x.data(), x.data(), dim, k).unwrap_or_else(|e| {
            failure = Some(e);
            Vec::new()
        })
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    if neighbors.len() != n * k || neighbors.iter().any(|&j| j >= n) {
        return Err(TensorError::Replay { op: "knn" }.into());
    }
    Ok(neighbors)
}

/// Edge convolution over fixed neighbor lists (`neighbors[i·k..(i+1)·k]`
/// for point i): shared map on `[h_i, h_j - h_i]`, leaky ReLU, max over
/// neighbors. `h` is N×C_in; output N×C_out.
///
/// The map splits into a center term plus a neighbor term, and both the
/// leaky ReLU and adding the center term are monotone, so the max is taken
/// over the neighbor term alone before they are applied. With `norm`, the
/// maxed pre-activations are standardized over all points before the
/// leaky ReLU.
pub fn point_feature_conv(
    tape: &mut Tape,
    store: &ParamStore,
    conv: &PairLinear,
    norm: Option<&Norm>,
    h: Var,
    neighbors: &[usize],
    k: usize,
) -> Result<Var> {
    let wc = tape.param(store, conv.w_center);
    let wd = tape.param(store, conv.w_delta);
    let b = tape.param(store, conv.b);
    let w_self = tape.sub(wc, wd)?;
    let own = tape.linear(h, w_self, b)?;
    let other = tape.matmul(h, wd)?;
    let other = tape.gather_max(other, neighbors, k)?;
    let pre = tape.add(own, other)?;
    activate(tape, store, norm, pre, None)
}

/// Componentwise max over all rows of an N×C tensor.
pub fn global_max_pool(tape: &mut Tape, h: Var) -> Result<Var> {
    Ok(tape.reduce_max(h, 0)?)
}

/// Componentwise max over the points of each part; empty parts get `fill`.
pub fn part_max_pool(tape: &mut Tape, h: Var, partition: &Partition, fill: f64) -> Result<Var> {
    Ok(tape.segment_max(h, partition.parts(), fill)?)
}

/// Row indices `(i, j)` of every ordered pair, in `i·V + j` order.
pub fn pair_indices(v: usize) -> (Vec<usize>, Vec<usize>) {
    (0..v * v).map(|r| (r / v, r % v)).unzip()
}

/// `e_ij = [f_i, f_j - f_i]` for all ordered pairs; V²×2C.
pub fn part_edge_features(tape: &mut Tape, f: Var) -> Result<Var> {
    let v = tape.shape(f)[0];
    let (ci, cj) = pair_indices(v);
    let fi = tape.gather_rows(f, &ci)?;
    let fj = tape.gather_rows(f, &cj)?;
    let diff = tape.sub(fj, fi)?;
    Ok(tape.concat_last(fi, diff)?)
}

/// Shared two-layer MLP on part edge features.
#[derive(Clone, Copy, Debug)]
pub struct PartConv {
    pub first: PairLinear,
    pub first_norm: Option<Norm>,
    pub second: Linear,
    pub second_norm: Option<Norm>,
}

/// Applies the part MLP to every ordered pair of part features `f` (V×C),
/// giving V²×C. Equivalent to running it on [`part_edge_features`].
/// Normalization statistics come from the pair rows `rows`.
pub fn part_conv(
    tape: &mut Tape,
    store: &ParamStore,
    conv: &PartConv,
    f: Var,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let v = tape.shape(f)[0];
    let (ci, cj) = pair_indices(v);
    let pre = conv.first.apply_pairs(tape, store, f, &ci, &cj)?;
    let hidden = activate(tape, store, conv.first_norm.as_ref(), pre, rows)?;
    let out = conv.second.apply(tape, store, hidden)?;
    activate(tape, store, conv.second_norm.as_ref(), out, rows)
}

/// Pair classifier into hop classes.
#[derive(Clone, Copy, Debug)]
pub struct HopHead {
    pub hidden: Linear,
    pub norm: Option<Norm>,
    pub out: Linear,
}

/// Raw hop-class logits per ordered pair; V²×(δ+1).
pub fn hop_head(
    tape: &mut Tape,
    store: &ParamStore,
    head: &HopHead,
    edges: Var,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let h = head.hidden.apply(tape, store, edges)?;
    let h = activate(tape, store, head.norm.as_ref(), h, rows)?;
    head.out.apply(tape, store, h)
}

/// Mean cross-entropy over valid ordered pairs.
pub fn hop_distance_loss(tape: &mut Tape, logits: Var, hops: &HopMatrix) -> Result<Var> {
    let valid = hops.valid_pairs();
    if valid.is_empty() {
        return Err(Error::NoValidPairs);
    }
    let targets: Vec<usize> = valid.iter().map(|&r| hops.distances()[r]).collect();
    let picked = tape.gather_rows(logits, &valid)?;
    Ok(tape.cross_entropy_logits(picked, &targets)?)
}

/// Gaussian kernel `exp(-x²/(2σ²)) / √(2π)`.
pub fn gaussian_kernel(x: f64, sigma2: f64) -> f64 {
    (-x * x / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// One attention weight per pair from its hop logits (V²×(δ+1)), output V².
pub fn kernel_weights(tape: &mut Tape, logits: Var, sigma2: f64, mode: KernelMode) -> Result<Var> {
    let (rows, classes) = tape.value(logits).rows_cols();
    let table: Vec<f64> = (0..classes)
        .map(|k| gaussian_kernel(k as f64, sigma2))
        .collect();
    match mode {
        KernelMode::Soft => {
            let probs = tape.softmax_masked(logits, None, 1)?;
            let g = tape.leaf(Tensor::new(vec![classes, 1], table)?);
            let w = tape.matmul(probs, g)?;
            Ok(tape.reshape(w, &[rows])?)
        }
        KernelMode::Argmax => {
            let picks = tape.choose("hop_argmax", |t| argmax_rows(t.value(logits)))?;
            if picks.len() != rows || picks.iter().any(|&k| k >= classes) {
                return Err(TensorError::Replay { op: "hop_argmax" }.into());
            }
            let w = picks.into_iter().map(|k| table[k]).collect();
            Ok(tape.leaf(Tensor::new(vec![rows], w)?))
        }
    }
}

/// Index of the largest entry in every row; ties go to the lowest class.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (rows, _) = t.rows_cols();
    (0..rows)
        .map(|r| {
            t.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &x)| {
                    if x > best.1 {
                        (k, x)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Per-head scalar score maps, one linear map per channel slice.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: Vec<Linear>,
}

/// Attention logits `t` as V×V×H. With `weights` present (λ = 1) each pair
/// feature is scaled by its kernel weight before scoring; without (λ = 0)
/// the pair features are scored directly.
pub fn hga_scores(
    tape: &mut Tape,
    store: &ParamStore,
    attn: &Attention,
    edges: Var,
    weights: Option<Var>,
) -> Result<Var> {
    let (rows, cols) = tape.value(edges).rows_cols();
    let heads = attn.heads.len();
    let width = cols / heads;
    let x = match weights {
        Some(w) => tape.scale_rows(edges, w)?,
        None => edges,
    };
    let mut scores: Option<Var> = None;
    for (h, lin) in attn.heads.iter().enumerate() {
        let slice = tape.slice_last(x, h * width, width)?;
        let s = lin.apply(tape, store, slice)?;
        scores = Some(match scores {
            None => s,
            Some(prev) => tape.concat_last(prev, s)?,
        });
    }
    let v = (rows as f64).sqrt().round() as usize;
    let scores = scores.ok_or(TensorError::EmptyReduction { op: "hga_scores" })?;
    Ok(tape.reshape(scores, &[v, v, heads])?)
}

/// Softmax over `j` of V×V×H scores restricted to valid pairs; rows of
/// empty parts are all zero.
pub fn hga_normalize(tape: &mut Tape, scores: Var, valid: &[bool]) -> Result<Var> {
    let heads = tape.shape(scores)[2];
    let mask: Vec<bool> = valid
        .iter()
        .flat_map(|&b| std::iter::repeat_n(b, heads))
        .collect();
    Ok(tape.softmax_masked_or_zero(scores, &mask, 1)?)
}

/// `f̃_i = max_j α_ij · e′_ij` over valid `j`, per head on its channel
/// slice; V×C. Parts with no valid pair get zeros.
pub fn hga_aggregate(tape: &mut Tape, alpha: Var, edges: Var, valid: &[bool]) -> Result<Var> {
    let shape = tape.shape(alpha).to_vec();
    let (v, heads) = (shape[0], shape[2]);
    let cols = tape.shape(edges)[1];
    let flat = tape.reshape(alpha, &[v * v, heads])?;
    let spread = tape.repeat_last(flat, cols / heads)?;
    let weighted = tape.mul(spread, edges)?;
    let groups: Vec<Vec<usize>> = (0..v)
        .map(|i| (0..v).map(|j| i * v + j).filter(|&r| valid[r]).collect())
        .collect();
    Ok(tape.segment_max(weighted, &groups, 0.0)?)
}

/// `h̃_p = h_p + f̃_{part(p)}` for every point.
pub fn revise_point_features(
    tape: &mut Tape,
    revised_parts: Var,
    h: Var,
    partition: &Partition,
) -> Result<Var> {
    let lifted = tape.gather_rows(revised_parts, partition.assignment())?;
    Ok(tape.add(h, lifted)?)
}
