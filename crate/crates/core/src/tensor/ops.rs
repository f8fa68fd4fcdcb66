//! Differentiable primitives and the reverse pass.

use std::collections::{HashMap, HashSet};

use super::kernels::gemm;
use super::{Float, Node, Result, Rng, Tensor, TensorError};

pub(crate) enum Op<F: Float> {
    Reshape(Tensor<F>),
    MatMul {
        a: Tensor<F>,
        b: Tensor<F>,
        trans_b: bool,
    },
    Add(Tensor<F>, Tensor<F>),
    AddRow(Tensor<F>, Tensor<F>),
    Mul(Tensor<F>, Tensor<F>),
    Scale(Tensor<F>, F),
    Sum(Tensor<F>),
    Relu(Tensor<F>),
    Dropout {
        x: Tensor<F>,
        mask: Vec<F>,
    },
    Softmax(Tensor<F>),
    LayerNorm {
        x: Tensor<F>,
        gain: Tensor<F>,
        bias: Tensor<F>,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Conv1d {
        x: Tensor<F>,
        kernels: Tensor<F>,
        bias: Tensor<F>,
        cols: Vec<F>,
        pad: usize,
    },
    Linear {
        x: Tensor<F>,
        w: Tensor<F>,
        b: Tensor<F>,
    },
    ConcatLast(Vec<Tensor<F>>),
    SliceLast {
        x: Tensor<F>,
        start: usize,
    },
    Nll {
        logits: Tensor<F>,
        probs: Vec<F>,
        targets: Vec<usize>,
        weights: Vec<F>,
    },
}

impl<F: Float> Op<F> {
    fn inputs(&self) -> Vec<&Tensor<F>> {
        match self {
            Op::Reshape(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Relu(x)
            | Op::Dropout { x, .. }
            | Op::Softmax(x)
            | Op::SliceLast { x, .. } => vec![x],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Conv1d {
                x, kernels, bias, ..
            } => vec![x, kernels, bias],
            Op::Linear { x, w, b } => vec![x, w, b],
            Op::ConcatLast(parts) => parts.iter().collect(),
            Op::Nll { logits, .. } => vec![logits],
        }
    }

    pub(crate) fn any_requires_grad(&self) -> bool {
        self.inputs().iter().any(|t| t.requires_grad())
    }
}

/// How per-frame losses are combined by [`nll_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    /// Sum over valid rows.
    Sum,
    /// Mean over valid rows.
    Mean,
    /// Sum over valid rows divided by a fixed count (e.g. frames in a batch).
    SumOver(usize),
}

fn mismatch<F: Float>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix<F: Float>(op: &'static str, a: &Tensor<F>) -> Result<(usize, usize)> {
    match *a.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// Matrix product `a · b` of an `m×k` and a `k×n` matrix.
pub fn matmul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![F::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        Op::MatMul {
            a: a.clone(),
            b: b.clone(),
            trans_b: false,
        },
    ))
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = require_matrix("matmul_nt", a)?;
    let (n, k2) = require_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a, b));
    }
    let mut out = vec![F::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), true, &mut out, false);
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        Op::MatMul {
            a: a.clone(),
            b: b.clone(),
            trans_b: true,
        },
    ))
}

pub fn add<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return Err(mismatch("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Op::Add(a.clone(), b.clone()),
    ))
}

/// Adds a vector along the last axis of `x`.
pub fn add_row<F: Float>(x: &Tensor<F>, row: &Tensor<F>) -> Result<Tensor<F>> {
    let n = x.last_dim();
    if row.shape() != [n] {
        return Err(mismatch("add_row", x, row));
    }
    let mut data = x.data().to_vec();
    for chunk in data.chunks_mut(n) {
        for (v, r) in chunk.iter_mut().zip(row.data()) {
            *v += *r;
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        Op::AddRow(x.clone(), row.clone()),
    ))
}

/// Elementwise product.
pub fn mul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return Err(mismatch("mul", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Op::Mul(a.clone(), b.clone()),
    ))
}

pub fn scale<F: Float>(x: &Tensor<F>, s: F) -> Tensor<F> {
    let data = x.data().iter().map(|v| *v * s).collect();
    Tensor::from_op(x.shape().to_vec(), data, Op::Scale(x.clone(), s))
}

/// Sum of all entries as a one-element tensor.
pub fn sum<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let total = x.data().iter().copied().sum();
    Tensor::from_op(vec![1], vec![total], Op::Sum(x.clone()))
}

pub fn relu<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let data = x.data().iter().map(|v| v.max(F::zero())).collect();
    Tensor::from_op(x.shape().to_vec(), data, Op::Relu(x.clone()))
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` in training mode,
/// evaluation mode is the identity.
pub fn dropout<F: Float>(x: &Tensor<F>, p: f64, rng: &mut Rng, training: bool) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidProbability(p));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..x.numel())
        .map(|_| if rng.uniform() < p { F::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        Op::Dropout {
            x: x.clone(),
            mask,
        },
    ))
}

/// Row-wise softmax over the last axis, stabilized by the row maximum.
/// `-inf` entries receive exactly zero weight.
pub fn softmax_rows<F: Float>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let n = x.last_dim();
    let mut out = x.data().to_vec();
    for (row, chunk) in out.chunks_mut(n).enumerate() {
        let max = chunk.iter().copied().fold(F::neg_infinity(), F::max);
        if max == F::neg_infinity() {
            return Err(TensorError::FullyMaskedRow { row });
        }
        let mut total = F::zero();
        for v in chunk.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in chunk.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::Softmax(x.clone()),
    ))
}

/// Normalizes the last axis to zero mean and unit variance, then applies
/// `gain ⊙ x̂ + bias`.
pub fn layer_norm<F: Float>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: f64,
) -> Result<Tensor<F>> {
    let d = x.last_dim();
    if d < 2 {
        return Err(TensorError::InvalidConfig(format!(
            "layer_norm needs at least 2 features, got {d}"
        )));
    }
    if eps <= 0.0 {
        return Err(TensorError::InvalidConfig(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    if gain.shape() != [d] {
        return Err(mismatch("layer_norm", x, gain));
    }
    if bias.shape() != [d] {
        return Err(mismatch("layer_norm", x, bias));
    }
    let eps = F::from_f64_lossy(eps);
    let dn = F::from_usize(d).expect("small");
    let rows = x.rows();
    let mut xhat = vec![F::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = vec![F::zero(); x.numel()];
    for r in 0..rows {
        let src = &x.data()[r * d..(r + 1) * d];
        let mean = src.iter().copied().sum::<F>() / dn;
        let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / dn;
        let inv = F::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (src[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = gain.data()[j] * h + bias.data()[j];
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::LayerNorm {
            x: x.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            xhat,
            inv_std,
        },
    ))
}

/// Same-padded, stride-1 1D convolution over time.
///
/// `x` is `T×C`, `kernels` is `C_out×C×k`; output is `T×C_out` with
/// `out[t,o] = bias[o] + Σ_c Σ_j kernels[o,c,j] · x[t+j-(k-1)/2, c]`.
pub fn conv1d_same<F: Float>(
    x: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    k: usize,
) -> Result<Tensor<F>> {
    if k.is_multiple_of(2) {
        return Err(TensorError::InvalidConfig(format!(
            "convolution kernel width must be odd, got {k}"
        )));
    }
    conv1d(x, kernels, bias, k, (k - 1) / 2)
}

/// Length-preserving convolution with `pad` zero frames before the sequence
/// and `k - 1 - pad` after it: `out[t] = bias + Σ_j kernels[.., j] · x[t+j-pad]`.
/// `pad = k - 1` sees only frames `<= t`, `pad = 0` only frames `>= t`.
pub fn conv1d<F: Float>(
    x: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    k: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    if k == 0 || pad >= k {
        return Err(TensorError::InvalidConfig(format!(
            "padding {pad} invalid for kernel width {k}"
        )));
    }
    let (t_len, c_in) = require_matrix("conv1d", x)?;
    let (c_out, kc, kk) = match *kernels.shape() {
        [o, c, w] => (o, c, w),
        _ => return Err(mismatch("conv1d", x, kernels)),
    };
    if kc != c_in || kk != k {
        return Err(mismatch("conv1d", x, kernels));
    }
    if bias.shape() != [c_out] {
        return Err(mismatch("conv1d", kernels, bias));
    }
    let width = c_in * k;
    let cols = im2col(x.data(), t_len, c_in, k, pad);
    let mut out = vec![F::zero(); t_len * c_out];
    gemm(t_len, width, c_out, &cols, false, kernels.data(), true, &mut out, false);
    for row in out.chunks_mut(c_out) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += *b;
        }
    }
    Ok(Tensor::from_op(
        vec![t_len, c_out],
        out,
        Op::Conv1d {
            x: x.clone(),
            kernels: kernels.clone(),
            bias: bias.clone(),
            cols,
            pad,
        },
    ))
}

/// Source frame of tap `j` for output frame `t`, if inside the sequence.
fn tap(t: usize, j: usize, pad: usize, t_len: usize) -> Option<usize> {
    (t + j).checked_sub(pad).filter(|s| *s < t_len)
}

fn im2col<F: Float>(x: &[F], t_len: usize, c_in: usize, k: usize, pad: usize) -> Vec<F> {
    let width = c_in * k;
    let mut cols = vec![F::zero(); t_len * width];
    for t in 0..t_len {
        let row = &mut cols[t * width..(t + 1) * width];
        for j in 0..k {
            if let Some(s) = tap(t, j, pad, t_len) {
                for c in 0..c_in {
                    row[c * k + j] = x[s * c_in + c];
                }
            }
        }
    }
    cols
}

/// `x · w + b` over the last axis of `x`.
pub fn linear<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let d_in = x.last_dim();
    let (wi, d_out) = require_matrix("linear", w)?;
    if wi != d_in {
        return Err(mismatch("linear", x, w));
    }
    if b.shape() != [d_out] {
        return Err(mismatch("linear", w, b));
    }
    let rows = x.rows();
    let mut out = vec![F::zero(); rows * d_out];
    for row in out.chunks_mut(d_out) {
        row.copy_from_slice(b.data());
    }
    gemm(rows, d_in, d_out, x.data(), false, w.data(), false, &mut out, true);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("nonempty") = d_out;
    Ok(Tensor::from_op(
        shape,
        out,
        Op::Linear {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
        },
    ))
}

/// Joins two tensors along the final axis.
pub fn concat_last<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    concat_last_many(&[a.clone(), b.clone()])
}

pub fn concat_last_many<F: Float>(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::InvalidConfig("concat of zero tensors".into()))?;
    let lead = &first.shape()[..first.shape().len() - 1];
    for p in parts {
        if &p.shape()[..p.shape().len() - 1] != lead {
            return Err(mismatch("concat_last", first, p));
        }
    }
    let rows = first.rows();
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let n = p.last_dim();
            out.extend_from_slice(&p.data()[r * n..(r + 1) * n]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_op(shape, out, Op::ConcatLast(parts.to_vec())))
}

/// Columns `start..start+len` of the last axis.
pub fn slice_last<F: Float>(x: &Tensor<F>, start: usize, len: usize) -> Result<Tensor<F>> {
    let n = x.last_dim();
    if len == 0 || start + len > n {
        return Err(TensorError::InvalidConfig(format!(
            "slice {start}..{} out of bounds for last dim {n}",
            start + len
        )));
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * n + start..r * n + start + len]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("nonempty") = len;
    Ok(Tensor::from_op(
        shape,
        out,
        Op::SliceLast {
            x: x.clone(),
            start,
        },
    ))
}

/// Negative log-likelihood of `targets` under the row-softmax of `logits`.
///
/// Rows with `valid[t] == false` contribute nothing (padding).
pub fn nll_loss<F: Float>(
    logits: &Tensor<F>,
    targets: &[usize],
    valid: &[bool],
    reduction: Reduction,
) -> Result<Tensor<F>> {
    let classes = logits.last_dim();
    let rows = logits.rows();
    if targets.len() != rows || valid.len() != rows {
        return Err(TensorError::ShapeMismatch {
            op: "nll_loss",
            left: logits.shape().to_vec(),
            right: vec![targets.len(), valid.len()],
        });
    }
    if let Some(&index) = targets
        .iter()
        .zip(valid)
        .find(|(t, v)| **v && **t >= classes)
        .map(|(t, _)| t)
    {
        return Err(TensorError::TargetOutOfRange { index, classes });
    }
    let n_valid = valid.iter().filter(|v| **v).count();
    let denom = match reduction {
        Reduction::Sum => 1,
        Reduction::Mean => n_valid.max(1),
        Reduction::SumOver(n) => n.max(1),
    };
    let w = F::one() / F::from_usize(denom).expect("small");
    let mut probs = vec![F::zero(); logits.numel()];
    let mut weights = vec![F::zero(); rows];
    let mut total = F::zero();
    for r in 0..rows {
        let row = &logits.data()[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
            *p = (*v - max).exp();
            z += *p;
        }
        for p in probs[r * classes..(r + 1) * classes].iter_mut() {
            *p = *p / z;
        }
        if valid[r] {
            weights[r] = w;
            let lse = max + z.ln();
            total += w * (lse - row[targets[r]]);
        }
    }
    Ok(Tensor::from_op(
        vec![1],
        vec![total],
        Op::Nll {
            logits: logits.clone(),
            probs,
            targets: targets.to_vec(),
            weights,
        },
    ))
}

impl<F: Float> Tensor<F> {
    /// Accumulates `d self / d leaf` into every reachable leaf that requires
    /// gradients. Repeated calls add to the existing buffers.
    pub fn backward(&self) -> Result<()> {
        for (leaf, g) in self.leaf_gradients()? {
            leaf.node().accumulate_grad(&g);
        }
        Ok(())
    }

    /// Runs the reverse pass and returns each reachable leaf with its gradient
    /// without touching the leaf buffers.
    pub fn leaf_gradients(&self) -> Result<Vec<(Tensor<F>, Vec<F>)>> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(Vec::new());
        }
        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);
        let mut leaves = Vec::new();
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.node().op {
                None => leaves.push((t.clone(), g)),
                Some(op) => propagate(op, t.node(), &g, &mut |input, gi| {
                    if input.requires_grad() {
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, v)| *a += *v),
                            None => {
                                grads.insert(input.id(), gi);
                            }
                        }
                    }
                }),
            }
        }
        Ok(leaves)
    }
}

/// Post-order over nodes that require gradients.
fn topo_order<F: Float>(root: &Tensor<F>) -> Vec<Tensor<F>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = &t.node().op {
            for input in op.inputs() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn propagate<F: Float>(
    op: &Op<F>,
    out: &Node<F>,
    g: &[F],
    emit: &mut dyn FnMut(&Tensor<F>, Vec<F>),
) {
    match op {
        Op::Reshape(x) => emit(x, g.to_vec()),
        Op::MatMul { a, b, trans_b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = out.shape[1];
            if a.requires_grad() {
                let mut ga = vec![F::zero(); m * k];
                // b is k×n (or n×k when transposed)
                gemm(m, n, k, g, false, b.data(), !*trans_b, &mut ga, false);
                emit(a, ga);
            }
            if b.requires_grad() {
                let mut gb = vec![F::zero(); k * n];
                if *trans_b {
                    gemm(n, m, k, g, true, a.data(), false, &mut gb, false);
                } else {
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, false);
                }
                emit(b, gb);
            }
        }
        Op::Add(a, b) => {
            if a.requires_grad() {
                emit(a, g.to_vec());
            }
            if b.requires_grad() {
                emit(b, g.to_vec());
            }
        }
        Op::AddRow(x, row) => {
            if x.requires_grad() {
                emit(x, g.to_vec());
            }
            if row.requires_grad() {
                emit(row, column_sums(g, row.numel()));
            }
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                emit(a, g.iter().zip(b.data()).map(|(g, v)| *g * *v).collect());
            }
            if b.requires_grad() {
                emit(b, g.iter().zip(a.data()).map(|(g, v)| *g * *v).collect());
            }
        }
        Op::Scale(x, s) => emit(x, g.iter().map(|v| *v * *s).collect()),
        Op::Sum(x) => emit(x, vec![g[0]; x.numel()]),
        Op::Relu(x) => emit(
            x,
            g.iter()
                .zip(x.data())
                .map(|(g, v)| if *v > F::zero() { *g } else { F::zero() })
                .collect(),
        ),
        Op::Dropout { x, mask } => emit(x, g.iter().zip(mask).map(|(g, m)| *g * *m).collect()),
        Op::Softmax(x) => {
            let n = x.last_dim();
            let mut gx = vec![F::zero(); g.len()];
            for ((gr, yr), out_r) in g.chunks(n).zip(out.data.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: F = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                for j in 0..n {
                    out_r[j] = yr[j] * (gr[j] - dot);
                }
            }
            emit(x, gx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = x.last_dim();
            let dn = F::from_usize(d).expect("small");
            if gain.requires_grad() {
                let gg = g
                    .chunks(d)
                    .zip(xhat.chunks(d))
                    .fold(vec![F::zero(); d], |mut acc, (gr, hr)| {
                        for j in 0..d {
                            acc[j] += gr[j] * hr[j];
                        }
                        acc
                    });
                emit(gain, gg);
            }
            if bias.requires_grad() {
                emit(bias, column_sums(g, d));
            }
            if x.requires_grad() {
                let mut gx = vec![F::zero(); g.len()];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = F::zero();
                    let mut sum_dh_h = F::zero();
                    for j in 0..d {
                        let dh = gr[j] * gain.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gain.data()[j];
                        gx[r * d + j] = *inv / dn * (dn * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                emit(x, gx);
            }
        }
        Op::Conv1d {
            x,
            kernels,
            bias,
            cols,
            pad,
        } => {
            let (t_len, c_in) = (x.shape()[0], x.shape()[1]);
            let (c_out, k) = (kernels.shape()[0], kernels.shape()[2]);
            let width = c_in * k;
            if kernels.requires_grad() {
                let mut gk = vec![F::zero(); c_out * width];
                gemm(c_out, t_len, width, g, true, cols, false, &mut gk, false);
                emit(kernels, gk);
            }
            if bias.requires_grad() {
                emit(bias, column_sums(g, c_out));
            }
            if x.requires_grad() {
                let mut gcols = vec![F::zero(); t_len * width];
                gemm(t_len, c_out, width, g, false, kernels.data(), false, &mut gcols, false);
                let mut gx = vec![F::zero(); t_len * c_in];
                for t in 0..t_len {
                    for j in 0..k {
                        if let Some(s) = tap(t, j, *pad, t_len) {
                            for c in 0..c_in {
                                gx[s * c_in + c] += gcols[t * width + c * k + j];
                            }
                        }
                    }
                }
                emit(x, gx);
            }
        }
        Op::Linear { x, w, b } => {
            let d_in = x.last_dim();
            let d_out = w.shape()[1];
            let rows = x.rows();
            if x.requires_grad() {
                let mut gx = vec![F::zero(); rows * d_in];
                gemm(rows, d_out, d_in, g, false, w.data(), true, &mut gx, false);
                emit(x, gx);
            }
            if w.requires_grad() {
                let mut gw = vec![F::zero(); d_in * d_out];
                gemm(d_in, rows, d_out, x.data(), true, g, false, &mut gw, false);
                emit(w, gw);
            }
            if b.requires_grad() {
                emit(b, column_sums(g, d_out));
            }
        }
        Op::ConcatLast(parts) => {
            let total = out.shape.last().copied().expect("nonempty");
            let rows = g.len() / total;
            let mut offset = 0;
            for p in parts {
                let n = p.last_dim();
                if p.requires_grad() {
                    let mut gp = Vec::with_capacity(rows * n);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + n]);
                    }
                    emit(p, gp);
                }
                offset += n;
            }
        }
        Op::SliceLast { x, start } => {
            let n = x.last_dim();
            let len = out.shape.last().copied().expect("nonempty");
            let mut gx = vec![F::zero(); x.numel()];
            for (r, gr) in g.chunks(len).enumerate() {
                gx[r * n + start..r * n + start + len].copy_from_slice(gr);
            }
            emit(x, gx);
        }
        Op::Nll {
            logits,
            probs,
            targets,
            weights,
        } => {
            let classes = logits.last_dim();
            let mut gl = vec![F::zero(); probs.len()];
            for (r, w) in weights.iter().enumerate() {
                if *w == F::zero() {
                    continue;
                }
                let scale = g[0] * *w;
                for c in 0..classes {
                    gl[r * classes + c] = scale * probs[r * classes + c];
                }
                gl[r * classes + targets[r]] -= scale;
            }
            emit(logits, gl);
        }
    }
}

fn column_sums<F: Float>(g: &[F], n: usize) -> Vec<F> {
    g.chunks(n).fold(vec![F::zero(); n], |mut acc, row| {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_cases() {
        let a = t(&[2, 2], &[1.5, -2.0, 0.25, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&eye, &a).unwrap().data(), a.data());
        let r = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        assert_eq!(r.shape(), &[1, 1]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_naming_shapes() {
        let err = matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 3], &[0.0; 6])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t(&[1, 2], &[5.0, f64::NEG_INFINITY])).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
        let err = softmax_rows(&t(&[2, 2], &[0.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY]));
        assert_eq!(err.unwrap_err(), TensorError::FullyMaskedRow { row: 1 });
    }

    #[test]
    fn layer_norm_cases() {
        let ones = t(&[2], &[1.0, 1.0]);
        let zeros = t(&[2], &[0.0, 0.0]);
        let c = layer_norm(&t(&[1, 2], &[3.0, 3.0]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
        let n = layer_norm(&t(&[1, 2], &[1.0, -1.0]), &ones, &zeros, 1e-12).unwrap();
        assert!((n.data()[0] - 1.0).abs() < 1e-9 && (n.data()[1] + 1.0).abs() < 1e-9);
        assert!(layer_norm(&t(&[1, 1], &[1.0]), &t(&[1], &[1.0]), &t(&[1], &[0.0]), 1e-5).is_err());
    }

    #[test]
    fn conv_hand_cases() {
        let x = t(&[3, 1], &[1.0, 1.0, 1.0]);
        let k = t(&[1, 1, 3], &[1.0, 1.0, 1.0]);
        let b = t(&[1], &[0.0]);
        assert_eq!(conv1d_same(&x, &k, &b, 3).unwrap().data(), &[2.0, 3.0, 2.0]);

        let delta = t(&[5, 1], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let w = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let out = conv1d_same(&delta, &w, &b, 3).unwrap();
        assert_eq!(out.data(), &[0.0, 3.0, 2.0, 1.0, 0.0]);

        let err = conv1d_same(&x, &t(&[1, 1, 2], &[1.0, 1.0]), &b, 2).unwrap_err();
        assert!(matches!(err, TensorError::InvalidConfig(_)));
    }

    #[test]
    fn conv_padding_selects_direction() {
        let delta = t(&[5, 1], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let w = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let b = t(&[1], &[0.0]);
        assert_eq!(conv1d(&delta, &w, &b, 3, 2).unwrap().data(), &[0.0, 0.0, 3.0, 2.0, 1.0]);
        assert_eq!(conv1d(&delta, &w, &b, 3, 0).unwrap().data(), &[3.0, 2.0, 1.0, 0.0, 0.0]);
        assert!(conv1d(&delta, &w, &b, 3, 3).is_err());
    }

    #[test]
    fn conv_preserves_length_for_odd_widths() {
        for k in [1usize, 3, 5, 7, 9] {
            for t_len in [1usize, 2, 5, 11] {
                let x = t(&[t_len, 2], &vec![0.5; t_len * 2]);
                let w = t(&[3, 2, k], &vec![0.1; 6 * k]);
                let b = t(&[3], &[0.0; 3]);
                assert_eq!(conv1d_same(&x, &w, &b, k).unwrap().shape(), &[t_len, 3]);
            }
        }
    }

    #[test]
    fn linear_cases() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let r = linear(&x, &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[1.0])).unwrap();
        assert_eq!(r.data(), &[4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let r = linear(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(r.data(), x.data());
        let x3 = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = linear(&x3, &eye, &t(&[2], &[1.0, 0.0])).unwrap();
        assert_eq!(r.shape(), &[2, 1, 2]);
        assert_eq!(r.data(), &[2.0, 2.0, 4.0, 4.0]);
    }

    #[test]
    fn relu_dropout_concat() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let mut rng = Rng::seed_from(7);
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        for training in [true, false] {
            assert_eq!(dropout(&x, 0.0, &mut rng, training).unwrap().data(), x.data());
        }
        assert_eq!(dropout(&x, 0.9, &mut rng, false).unwrap().data(), x.data());
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
        let c = concat_last(&t(&[2, 1], &[1.0, 2.0]), &t(&[2, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn dropout_is_unbiased_in_expectation() {
        let mut rng = Rng::seed_from(11);
        let x = Tensor::<f32>::new(&[100_000], vec![1.0; 100_000]).unwrap();
        let y = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.data().iter().map(|v| *v as f64).sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.data().iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn dropout_masks_repeat_under_same_seed() {
        let x = Tensor::<f32>::new(&[64], vec![1.0; 64]).unwrap();
        let a = dropout(&x, 0.3, &mut Rng::seed_from(5), true).unwrap();
        let b = dropout(&x, 0.3, &mut Rng::seed_from(5), true).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn backward_simple_losses() {
        let x = p(&[3], &[1.0, -2.0, 0.5]);
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);

        let x = p(&[2], &[1.0, 2.0]);
        sum(&mul(&x, &x).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
        // accumulation without zeroing
        sum(&mul(&x, &x).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_leaves_unreachable_zero() {
        let x = p(&[2], &[1.0, 2.0]);
        let unused = p(&[2], &[3.0, 4.0]);
        assert!(matches!(
            scale(&x, 2.0).backward(),
            Err(TensorError::NonScalarLoss(_))
        ));
        sum(&scale(&x, 2.0)).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(unused.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn nll_loss_cases() {
        let logits = t(&[1, 3], &[0.0, 1000.0, 0.0]);
        let l = nll_loss(&logits, &[1], &[true], Reduction::Mean).unwrap();
        assert!(l.data()[0].abs() < 1e-12);

        let uniform = t(&[4, 25], &[0.3; 100]);
        let l = nll_loss(&uniform, &[0, 5, 24, 3], &[true; 4], Reduction::Mean).unwrap();
        assert!((l.data()[0] - 25f64.ln()).abs() < 1e-12);
        assert!((25f64.ln() - 3.2189).abs() < 1e-4);

        let l = nll_loss(&uniform, &[0, 5, 24, 99], &[true, true, true, false], Reduction::Sum);
        assert!((l.unwrap().data()[0] - 3.0 * 25f64.ln()).abs() < 1e-12);
        assert!(matches!(
            nll_loss(&uniform, &[0, 5, 25, 3], &[true; 4], Reduction::Sum),
            Err(TensorError::TargetOutOfRange { index: 25, .. })
        ));
    }

    #[test]
    fn nll_gradient_is_softmax_minus_onehot() {
        let logits = p(&[2, 3], &[0.1, 0.5, -0.2, 1.0, 0.0, 0.3]);
        nll_loss(&logits, &[2, 0], &[true, true], Reduction::Sum)
            .unwrap()
            .backward()
            .unwrap();
        let probs = softmax_rows(&logits.detach()).unwrap();
        let mut want = probs.data().to_vec();
        want[2] -= 1.0;
        want[3] -= 1.0;
        for (g, w) in logits.grad().unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_graph_records_nothing() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = matmul(&a, &a).unwrap();
        assert!(r.is_leaf() && !r.requires_grad());
    }
}
