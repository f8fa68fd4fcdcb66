//! Positional encoding, directional masks and scaled dot-product attention.

use crate::tensor::{
    add, concat_last_many, dropout, linear, matmul, matmul_nt, scale, slice_last, softmax_rows,
    Float, Rng, Tensor,
};

use super::{NetError, Result};

/// Attention direction of a self-attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Query frame `i` sees frames `j <= i`.
    Forward,
    /// Query frame `i` sees frames `j >= i`.
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn tag(self) -> char {
        match self {
            Direction::Forward => 'f',
            Direction::Backward => 'b',
        }
    }

    pub fn from_tag(c: char) -> Option<Self> {
        match c {
            'f' => Some(Direction::Forward),
            'b' => Some(Direction::Backward),
            _ => None,
        }
    }

    pub fn admits(self, query: usize, key: usize) -> bool {
        match self {
            Direction::Forward => key <= query,
            Direction::Backward => key >= query,
        }
    }
}

/// Sinusoidal encoding, `T × d` row-major:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(t: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(NetError::Config(format!(
            "positional encoding needs an even width, got {d}"
        )));
    }
    let mut pe = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[pos * d + 2 * i] = angle.sin();
            pe[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Ok(pe)
}

/// Additive `T × T` mask of `0` (visible) and `-inf` (hidden).
pub fn directional_mask(t: usize, dir: Direction) -> Vec<f64> {
    let mut mask = vec![f64::NEG_INFINITY; t * t];
    for i in 0..t {
        for j in 0..t {
            if dir.admits(i, j) {
                mask[i * t + j] = 0.0;
            }
        }
    }
    mask
}

pub(crate) fn mask_tensor<F: Float>(t: usize, dir: Direction) -> Tensor<F> {
    let data = directional_mask(t, dir)
        .into_iter()
        .map(|v| if v == 0.0 { F::zero() } else { F::neg_infinity() })
        .collect();
    Tensor::new(&[t, t], data).expect("square mask")
}

/// Dropout settings for one forward pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub training: bool,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    pub(crate) fn apply<F: Float>(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(dropout(x, self.p, self.rng, self.training)?)
    }
}

/// `softmax(Q Kᵀ / √d_k + mask) V`. Returns the output and the attention
/// weights before dropout.
pub fn attention<F: Float>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    mask: Option<&Tensor<F>>,
    drop: &mut Dropout<'_>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d_k = q.shape()[q.shape().len() - 1];
    let scores = scale(&matmul_nt(q, k)?, F::from_f64_lossy(1.0 / (d_k as f64).sqrt()));
    let scores = match mask {
        Some(m) => add(&scores, m)?,
        None => scores,
    };
    let weights = softmax_rows(&scores)?;
    let dropped = drop.apply(&weights)?;
    Ok((matmul(&dropped, v)?, weights))
}

/// Weights and biases of one `d → d` projection.
#[derive(Debug, Clone)]
pub struct Projection<F: Float> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Float> Projection<F> {
    pub fn apply(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(linear(x, &self.weight, &self.bias)?)
    }
}

/// Parameters of one multi-head self-attention module.
#[derive(Debug, Clone)]
pub struct MultiHeadParams<F: Float> {
    pub query: Projection<F>,
    pub key: Projection<F>,
    pub value: Projection<F>,
    pub output: Projection<F>,
}

/// `Concat(head_1..head_h) W_O` with `head_j = attention((I W_Q)_j, (I W_K)_j,
/// (I W_V)_j)`. Also returns each head's attention weights.
pub fn multi_head<F: Float>(
    input: &Tensor<F>,
    params: &MultiHeadParams<F>,
    mask: Option<&Tensor<F>>,
    n_heads: usize,
    drop: &mut Dropout<'_>,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let d = input.shape()[input.shape().len() - 1];
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(NetError::Config(format!(
            "width {d} not divisible by {n_heads} heads"
        )));
    }
    let dh = d / n_heads;
    let q = params.query.apply(input)?;
    let k = params.key.apply(input)?;
    let v = params.value.apply(input)?;
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (out, w) = attention(
            &slice_last(&q, h * dh, dh)?,
            &slice_last(&k, h * dh, dh)?,
            &slice_last(&v, h * dh, dh)?,
            mask,
            drop,
        )?;
        heads.push(out);
        weights.push(w);
    }
    let joined = if n_heads == 1 {
        heads.pop().expect("one head")
    } else {
        concat_last_many(&heads)?
    };
    Ok((params.output.apply(&joined)?, weights))
}
