//! The bi-directional Transformer for chord recognition.
//!
//! ```text
//! features (T×bins) → input projection → + positional encoding → dropout
//!   → N × bidirectional layer → logit head (T×|V|)
//! ```
//!
//! Each bidirectional layer runs two self-attention blocks over the same
//! input, one restricted to past frames and one to future frames, and merges
//! them with a `2d → d` projection. A block is
//! `A = LN(X + drop(MHA(X)))`, `B = LN(A + drop(conv_block(A)))` where the
//! convolutional block is `n_C` repetitions of conv → ReLU → dropout.

mod attention;
mod config;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng as _;
use thiserror::Error;

use crate::features::{segment, FeatureMatrix, SegmentMode};
use crate::tensor::{
    add, concat_last, conv1d, layer_norm, linear, relu, Float, Rng, Tensor, TensorError,
};

pub use attention::{
    attention, directional_mask, multi_head, positional_encoding, Direction, Dropout,
    MultiHeadParams, Projection,
};
pub use config::BtcConfig;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Shrinks the logit head's initial weights so the untrained model predicts
/// a near-uniform distribution.
const HEAD_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has shape {actual:?}, model expects T×{bins}")]
    InputShape { bins: usize, actual: Vec<usize> },
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier {
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LinearIx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct BlockIx {
    query: LinearIx,
    key: LinearIx,
    value: LinearIx,
    output: LinearIx,
    attn_norm: NormIx,
    conv_norm: NormIx,
    convs: Vec<LinearIx>,
}

#[derive(Debug, Clone)]
struct LayerIx {
    forward: BlockIx,
    backward: BlockIx,
    combine: LinearIx,
}

#[derive(Debug, Clone)]
struct Layout {
    input: LinearIx,
    layers: Vec<LayerIx>,
    head: LinearIx,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> LinearIx {
        self.scaled_linear(prefix, d_in, d_out, 1.0)
    }

    fn scaled_linear(&mut self, prefix: &str, d_in: usize, d_out: usize, gain: f64) -> LinearIx {
        LinearIx {
            w: self.push(
                format!("{prefix}.weight"),
                vec![d_in, d_out],
                Init::Xavier {
                    fan_in: d_in,
                    fan_out: d_out,
                    gain,
                },
            ),
            b: self.push(format!("{prefix}.bias"), vec![d_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIx {
        NormIx {
            gain: self.push(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn conv(&mut self, prefix: &str, d: usize, k: usize) -> LinearIx {
        LinearIx {
            w: self.push(
                format!("{prefix}.kernels"),
                vec![d, d, k],
                Init::Xavier {
                    fan_in: d * k,
                    fan_out: d * k,
                    gain: 1.0,
                },
            ),
            b: self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn block(&mut self, prefix: &str, cfg: &BtcConfig) -> BlockIx {
        let d = cfg.model_dim;
        BlockIx {
            query: self.linear(&format!("{prefix}.query"), d, d),
            key: self.linear(&format!("{prefix}.key"), d, d),
            value: self.linear(&format!("{prefix}.value"), d, d),
            output: self.linear(&format!("{prefix}.output"), d, d),
            attn_norm: self.norm(&format!("{prefix}.attn_norm"), d),
            conv_norm: self.norm(&format!("{prefix}.conv_norm"), d),
            convs: (0..cfg.conv_repeats)
                .map(|j| self.conv(&format!("{prefix}.conv.{j}"), d, cfg.kernel))
                .collect(),
        }
    }

    fn build(cfg: &BtcConfig) -> (Layout, Vec<ParamSpec>) {
        let mut b = LayoutBuilder::default();
        let d = cfg.model_dim;
        let input = b.linear("input_proj", cfg.input_bins, d);
        let layers = (0..cfg.n_layers)
            .map(|i| LayerIx {
                forward: b.block(&format!("layers.{i}.fwd"), cfg),
                backward: b.block(&format!("layers.{i}.bwd"), cfg),
                combine: b.linear(&format!("layers.{i}.combine"), 2 * d, d),
            })
            .collect();
        let head = b.scaled_linear("head", d, cfg.vocab_size(), HEAD_INIT_GAIN);
        (Layout { input, layers, head }, b.specs)
    }
}

/// One `T×T` row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub size: usize,
    pub probs: Vec<f32>,
}

impl AttentionMap {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.size..(i + 1) * self.size]
    }
}

/// Attention weights of every layer, direction and head (`[layer][dir][head]`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionMapSet {
    pub layers: Vec<[Vec<AttentionMap>; 2]>,
}

impl AttentionMapSet {
    pub fn get(&self, layer: usize, dir: Direction, head: usize) -> Option<&AttentionMap> {
        let d = match dir {
            Direction::Forward => 0,
            Direction::Backward => 1,
        };
        self.layers.get(layer)?[d].get(head)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l[0].len() + l[1].len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full parameter set plus architecture.
#[derive(Debug, Clone)]
pub struct BtcModel<F: Float = f32> {
    config: BtcConfig,
    layout: Arc<Layout>,
    specs: Arc<Vec<ParamSpec>>,
    params: Vec<Tensor<F>>,
}

/// Output of one directional self-attention block.
pub struct BlockOutput<F: Float> {
    pub output: Tensor<F>,
    pub attention: Vec<Tensor<F>>,
}

impl<F: Float> BtcModel<F> {
    /// Xavier-uniform weights (the logit head scaled down), zero biases, unit
    /// layer-norm gains.
    pub fn new(config: BtcConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = LayoutBuilder::build(&config);
        let params = specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<F> = match spec.init {
                    Init::Xavier {
                        fan_in,
                        fan_out,
                        gain,
                    } => {
                        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n)
                            .map(|_| F::from_f64_lossy(rng.gen_range(-limit..limit) as f32 as f64))
                            .collect()
                    }
                    Init::Zeros => vec![F::zero(); n],
                    Init::Ones => vec![F::one(); n],
                };
                Tensor::param(&spec.shape, data)
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(BtcModel {
            config,
            layout: Arc::new(layout),
            specs: Arc::new(specs),
            params,
        })
    }

    /// Rebuilds a model from named tensors; every expected parameter must be
    /// present exactly once with the expected shape.
    pub fn from_named(config: BtcConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = LayoutBuilder::build(&config);
        let mut by_name: HashMap<String, Tensor<F>> = HashMap::new();
        for (name, t) in named {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(NetError::UnexpectedParam(name));
            }
        }
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = by_name
                .remove(&spec.name)
                .ok_or_else(|| NetError::MissingParam(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(NetError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
            params.push(Tensor::param(t.shape(), t.data().to_vec())?);
        }
        if let Some(name) = by_name.into_keys().min() {
            return Err(NetError::UnexpectedParam(name));
        }
        Ok(BtcModel {
            config,
            layout: Arc::new(layout),
            specs: Arc::new(specs),
            params,
        })
    }

    pub fn config(&self) -> &BtcConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.specs.iter().map(|s| s.name.as_str()).zip(&self.params)
    }

    /// Replaces every parameter; shapes must match the current ones.
    pub fn set_params(&mut self, params: Vec<Tensor<F>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(NetError::Config(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (spec, t) in self.specs.iter().zip(&params) {
            if t.shape() != spec.shape.as_slice() {
                return Err(NetError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    pub fn cast<G: Float>(&self) -> BtcModel<G> {
        BtcModel {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            specs: Arc::clone(&self.specs),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn p(&self, ix: usize) -> &Tensor<F> {
        &self.params[ix]
    }

    fn lin(&self, ix: LinearIx, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(linear(x, self.p(ix.w), self.p(ix.b))?)
    }

    fn proj(&self, ix: LinearIx) -> Projection<F> {
        Projection {
            weight: self.p(ix.w).clone(),
            bias: self.p(ix.b).clone(),
        }
    }

    fn norm(&self, ix: NormIx, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(layer_norm(x, self.p(ix.gain), self.p(ix.bias), LAYER_NORM_EPS)?)
    }

    fn block_ix(&self, layer: usize, dir: Direction) -> &BlockIx {
        let l = &self.layout.layers[layer];
        match dir {
            Direction::Forward => &l.forward,
            Direction::Backward => &l.backward,
        }
    }

    /// Projection parameters of one attention module.
    pub fn attention_params(&self, layer: usize, dir: Direction) -> MultiHeadParams<F> {
        let b = self.block_ix(layer, dir);
        MultiHeadParams {
            query: self.proj(b.query),
            key: self.proj(b.key),
            value: self.proj(b.value),
            output: self.proj(b.output),
        }
    }

    /// `n_C` repetitions of conv → ReLU → dropout. Convolutions keep the
    /// sequence length and look only toward the block's own direction, so a
    /// forward block never reads later frames.
    pub fn conv_block(
        &self,
        layer: usize,
        dir: Direction,
        x: &Tensor<F>,
        drop: &mut Dropout<'_>,
    ) -> Result<Tensor<F>> {
        let k = self.config.kernel;
        let pad = match dir {
            Direction::Forward => k - 1,
            Direction::Backward => 0,
        };
        let mut h = x.clone();
        for conv in &self.block_ix(layer, dir).convs {
            let c = conv1d(&h, self.p(conv.w), self.p(conv.b), k, pad)?;
            h = drop.apply(&relu(&c))?;
        }
        Ok(h)
    }

    /// One masked self-attention block followed by its convolutional block.
    pub fn directional_block(
        &self,
        layer: usize,
        dir: Direction,
        x: &Tensor<F>,
        drop: &mut Dropout<'_>,
    ) -> Result<BlockOutput<F>> {
        let t = x.shape()[0];
        let mask = attention::mask_tensor::<F>(t, dir);
        let ix = self.block_ix(layer, dir);
        let (attn, weights) = multi_head(
            x,
            &self.attention_params(layer, dir),
            Some(&mask),
            self.config.n_heads,
            drop,
        )?;
        let a = self.norm(ix.attn_norm, &add(x, &drop.apply(&attn)?)?)?;
        let conv = self.conv_block(layer, dir, &a, drop)?;
        let b = self.norm(ix.conv_norm, &add(&a, &drop.apply(&conv)?)?)?;
        Ok(BlockOutput {
            output: b,
            attention: weights,
        })
    }

    /// Both directional blocks, concatenated and projected back to width `d`.
    pub fn bidirectional_layer(
        &self,
        layer: usize,
        x: &Tensor<F>,
        drop: &mut Dropout<'_>,
        maps: Option<&mut AttentionMapSet>,
    ) -> Result<Tensor<F>> {
        let fwd = self.directional_block(layer, Direction::Forward, x, drop)?;
        let bwd = self.directional_block(layer, Direction::Backward, x, drop)?;
        if let Some(maps) = maps {
            let to_maps = |ws: &[Tensor<F>]| {
                ws.iter()
                    .map(|w| AttentionMap {
                        size: w.shape()[0],
                        probs: w.data().iter().map(|v| v.as_f64() as f32).collect(),
                    })
                    .collect()
            };
            maps.layers
                .push([to_maps(&fwd.attention), to_maps(&bwd.attention)]);
        }
        let joined = concat_last(&fwd.output, &bwd.output)?;
        self.lin(self.layout.layers[layer].combine, &joined)
    }

    /// Input projection plus positional encoding, before dropout.
    pub fn embed(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (t, bins) = match *x.shape() {
            [t, b] => (t, b),
            _ => {
                return Err(NetError::InputShape {
                    bins: self.config.input_bins,
                    actual: x.shape().to_vec(),
                })
            }
        };
        if bins != self.config.input_bins {
            return Err(NetError::InputShape {
                bins: self.config.input_bins,
                actual: x.shape().to_vec(),
            });
        }
        let d = self.config.model_dim;
        let pe: Vec<F> = positional_encoding(t, d)?
            .into_iter()
            .map(F::from_f64_lossy)
            .collect();
        let pe = Tensor::new(&[t, d], pe)?;
        Ok(add(&self.lin(self.layout.input, x)?, &pe)?)
    }

    /// Logits `T×|V|` for a `T×bins` input.
    pub fn forward_tensor(
        &self,
        x: &Tensor<F>,
        training: bool,
        rng: &mut Rng,
        mut maps: Option<&mut AttentionMapSet>,
    ) -> Result<Tensor<F>> {
        let mut drop = Dropout {
            p: self.config.dropout,
            training,
            rng,
        };
        let mut h = drop.apply(&self.embed(x)?)?;
        for layer in 0..self.config.n_layers {
            h = self.bidirectional_layer(layer, &h, &mut drop, maps.as_deref_mut())?;
        }
        self.lin(self.layout.head, &h)
    }

    /// Logits for frame-major `f32` features of `frames × input_bins`.
    pub fn forward(
        &self,
        features: &[f32],
        frames: usize,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor<F>> {
        let x = self.input_tensor(features, frames)?;
        self.forward_tensor(&x, training, rng, None)
    }

    fn input_tensor(&self, features: &[f32], frames: usize) -> Result<Tensor<F>> {
        let bins = self.config.input_bins;
        if frames == 0 || features.len() != frames * bins {
            return Err(NetError::InputShape {
                bins,
                actual: vec![frames, features.len() / frames.max(1)],
            });
        }
        Ok(Tensor::new(
            &[frames, bins],
            features.iter().map(|v| F::from_f64_lossy(*v as f64)).collect(),
        )?)
    }

    /// Evaluation-mode logits; deterministic.
    pub fn logits(&self, features: &[f32], frames: usize) -> Result<Tensor<F>> {
        self.forward(features, frames, false, &mut Rng::seed_from(0))
    }

    /// Per-frame argmax of the evaluation-mode logits (ties → lowest index).
    pub fn predict_segment(&self, features: &[f32], frames: usize) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(features, frames)?.data(), self.config.vocab_size()))
    }

    /// Predicts a whole song through non-overlapping zero-padded windows of
    /// `seq_len` frames, truncating the padded tail.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        let len = self.config.seq_len;
        let dummy = vec![0; features.frames()];
        let mut out = Vec::with_capacity(features.frames());
        for seg in segment("", features, &dummy, len, SegmentMode::Inference, 0) {
            let pred = self.predict_segment(&seg.features, len)?;
            out.extend_from_slice(&pred[..seg.valid]);
        }
        Ok(out)
    }

    /// Attention weights of every layer, direction and head, without dropout.
    pub fn attention_maps(&self, features: &[f32], frames: usize) -> Result<AttentionMapSet> {
        let x = self.input_tensor(features, frames)?;
        let mut maps = AttentionMapSet::default();
        self.forward_tensor(&x, false, &mut Rng::seed_from(0), Some(&mut maps))?;
        Ok(maps)
    }
}

/// Row-wise argmax; the first maximal entry wins.
pub fn argmax_rows<F: Float>(data: &[F], classes: usize) -> Vec<usize> {
    data.chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chord::VocabKind;

    fn tiny() -> BtcConfig {
        BtcConfig {
            n_layers: 2,
            n_heads: 2,
            model_dim: 16,
            conv_repeats: 1,
            dropout: 0.0,
            seq_len: 8,
            ..BtcConfig::default()
        }
    }

    fn random_input(frames: usize, rng: &mut Rng) -> Vec<f32> {
        (0..frames * 144).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [tiny(), BtcConfig::default(), BtcConfig { vocab: VocabKind::Large, ..tiny() }] {
            let m = BtcModel::<f32>::new(cfg.clone(), &mut Rng::seed_from(0)).unwrap();
            assert_eq!(m.parameter_count(), cfg.parameter_count());
        }
    }

    #[test]
    fn names_are_unique() {
        let m = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(0)).unwrap();
        let mut names: Vec<&str> = m.named_params().map(|(n, _)| n).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
    }

    #[test]
    fn initialization_is_seeded() {
        let a = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(4)).unwrap();
        let b = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(4)).unwrap();
        let c = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(5)).unwrap();
        for ((x, y), z) in a.params().iter().zip(b.params()).zip(c.params()) {
            assert_eq!(x.data(), y.data());
            if x.numel() > 100 {
                assert_ne!(x.data(), z.data());
            }
        }
    }

    #[test]
    fn logits_shape_and_eval_determinism() {
        let m = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(1)).unwrap();
        let x = random_input(8, &mut Rng::seed_from(2));
        let a = m.logits(&x, 8).unwrap();
        let b = m.logits(&x, 8).unwrap();
        assert_eq!(a.shape(), &[8, 25]);
        assert_eq!(a.data(), b.data());
        assert!(matches!(m.logits(&x[..143 * 8], 8), Err(NetError::InputShape { .. })));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax_rows(&[0.0f32; 6], 3), vec![0, 0]);
        assert_eq!(argmax_rows(&[1.0f32, 3.0, 3.0], 3), vec![1]);
    }

    #[test]
    fn zero_conv_repeats_is_identity() {
        let cfg = BtcConfig { conv_repeats: 0, ..tiny() };
        let m = BtcModel::<f64>::new(cfg, &mut Rng::seed_from(1)).unwrap();
        let x = Tensor::<f64>::new(&[4, 16], (0..64).map(|i| i as f64).collect()).unwrap();
        let mut rng = Rng::seed_from(0);
        let mut drop = Dropout { p: 0.0, training: false, rng: &mut rng };
        let y = m.conv_block(0, Direction::Forward, &x, &mut drop).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn from_named_checks_names_and_shapes() {
        let m = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(1)).unwrap();
        let named: Vec<(String, Tensor<f32>)> =
            m.named_params().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let back = BtcModel::from_named(tiny(), named.clone()).unwrap();
        let x = random_input(8, &mut Rng::seed_from(2));
        assert_eq!(m.logits(&x, 8).unwrap().data(), back.logits(&x, 8).unwrap().data());

        let mut missing = named.clone();
        missing.pop();
        assert!(matches!(BtcModel::from_named(tiny(), missing), Err(NetError::MissingParam(_))));
        let mut extra = named.clone();
        extra.push(("bogus".into(), Tensor::param(&[1], vec![0.0]).unwrap()));
        assert!(matches!(BtcModel::from_named(tiny(), extra), Err(NetError::UnexpectedParam(_))));
        let mut wrong = named;
        wrong[0].1 = Tensor::param(&[1], vec![0.0]).unwrap();
        assert!(matches!(BtcModel::from_named(tiny(), wrong), Err(NetError::ParamShape { .. })));
    }

    fn perturbed(x: &Tensor<f64>, rows: impl Iterator<Item = usize>, rng: &mut Rng) -> Tensor<f64> {
        let d = x.shape()[1];
        let mut data = x.data().to_vec();
        for r in rows {
            for v in &mut data[r * d..(r + 1) * d] {
                *v += rng.gen_range(-3.0..3.0);
            }
        }
        Tensor::new(x.shape(), data).unwrap()
    }

    fn block_rows(m: &BtcModel<f64>, dir: Direction, x: &Tensor<f64>) -> Vec<f64> {
        let mut rng = Rng::seed_from(0);
        let mut drop = Dropout { p: 0.0, training: false, rng: &mut rng };
        m.directional_block(0, dir, x, &mut drop).unwrap().output.data().to_vec()
    }

    #[test]
    fn directional_blocks_are_causal() {
        let cfg = BtcConfig { dropout: 0.2, conv_repeats: 2, ..tiny() };
        let m = BtcModel::<f64>::new(cfg, &mut Rng::seed_from(3)).unwrap();
        let mut rng = Rng::seed_from(9);
        let (t, d) = (8, 16);
        let x = Tensor::<f64>::new(&[t, d], (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        for cut in 0..t {
            let base_f = block_rows(&m, Direction::Forward, &x);
            let after = perturbed(&x, cut + 1..t, &mut rng);
            let out_f = block_rows(&m, Direction::Forward, &after);
            assert_eq!(&base_f[..(cut + 1) * d], &out_f[..(cut + 1) * d], "forward cut {cut}");

            let base_b = block_rows(&m, Direction::Backward, &x);
            let before = perturbed(&x, 0..cut, &mut rng);
            let out_b = block_rows(&m, Direction::Backward, &before);
            assert_eq!(&base_b[cut * d..], &out_b[cut * d..], "backward cut {cut}");
        }
    }

    #[test]
    fn bidirectional_layer_sees_the_future() {
        let m = BtcModel::<f64>::new(tiny(), &mut Rng::seed_from(3)).unwrap();
        let mut rng = Rng::seed_from(1);
        let x = Tensor::<f64>::new(&[8, 16], (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = perturbed(&x, 7..8, &mut rng);
        let mut r = Rng::seed_from(0);
        let mut drop = Dropout { p: 0.0, training: false, rng: &mut r };
        let a = m.bidirectional_layer(0, &x, &mut drop, None).unwrap();
        let b = m.bidirectional_layer(0, &y, &mut drop, None).unwrap();
        assert_ne!(&a.data()[..16], &b.data()[..16]);
    }

    #[test]
    fn attention_maps_are_triangular_and_stochastic() {
        let m = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(2)).unwrap();
        let x = random_input(8, &mut Rng::seed_from(5));
        let maps = m.attention_maps(&x, 8).unwrap();
        assert_eq!(maps.len(), 2 * 2 * 2);
        for layer in 0..2 {
            for dir in Direction::BOTH {
                for head in 0..2 {
                    let map = maps.get(layer, dir, head).unwrap();
                    for i in 0..8 {
                        let row = map.row(i);
                        let total: f64 = row.iter().map(|p| *p as f64).sum();
                        assert!((total - 1.0).abs() < 1e-6);
                        for (j, p) in row.iter().enumerate() {
                            if !dir.admits(i, j) {
                                assert_eq!(*p, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn permuting_frames_changes_logits() {
        let m = BtcModel::<f32>::new(tiny(), &mut Rng::seed_from(6)).unwrap();
        let x = random_input(8, &mut Rng::seed_from(7));
        let mut swapped = x.clone();
        swapped[..144].copy_from_slice(&x[144..288]);
        swapped[144..288].copy_from_slice(&x[..144]);
        let a = m.logits(&x, 8).unwrap();
        let b = m.logits(&swapped, 8).unwrap();
        assert_ne!(&a.data()[25..50], &b.data()[..25]);
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        use crate::tensor::{nll_loss, Reduction};
        use rand_distr::{Distribution, StandardNormal};
        let cfg = BtcConfig { n_layers: 2, ..BtcConfig::default() };
        let m = BtcModel::<f32>::new(cfg.clone(), &mut Rng::seed_from(0)).unwrap();
        let mut rng = Rng::seed_from(1);
        let x: Vec<f32> = (0..108 * 144).map(|_| StandardNormal.sample(&mut rng)).collect();
        let targets: Vec<usize> = (0..108).map(|_| rng.gen_range(0..25)).collect();
        let logits = m.logits(&x, 108).unwrap();
        let loss = nll_loss(&logits, &targets, &[true; 108], Reduction::Mean).unwrap();
        let uniform = 25f64.ln();
        assert!((loss.item().unwrap() as f64 - uniform).abs() < 0.1 * uniform);
    }
}
