//! Adam, the epoch loop, learning-rate decay and early stopping.

use std::fmt;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::annotation::AnnotationTrack;
use crate::chord::Vocabulary;
use crate::features::{
    align_labels, apply_norm, fit_norm_stats, log_compress, segment, shift_segment, FeatureError,
    FeatureMatrix, FeatureSegment, NormStats, SegmentMode, LOG_EPS, MAX_SHIFT, MIN_SHIFT,
};
use crate::net::{BtcModel, NetError};
use crate::tensor::{nll_loss, Float, Reduction, Rng, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("gradient count {grads} does not match parameter count {params}")]
    GradientCount { params: usize, grads: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Random pitch shift in `[-5, 6]` per segment per epoch.
    pub augment: bool,
    /// Stops as soon as validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            decay: 0.95,
            patience: 10,
            batch_size: 16,
            max_epochs: 100,
            seed: 0,
            augment: false,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay {} outside (0, 1)", self.decay));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        Ok(())
    }

    /// Applies one `key=value` override; `Ok(false)` for unrelated keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| TrainError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "decay" => self.decay = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "target_accuracy" => self.target_accuracy = Some(num(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lr={} decay={} patience={} batch_size={} max_epochs={} augment={}",
            self.lr, self.decay, self.patience, self.batch_size, self.max_epochs, self.augment
        )?;
        if let Some(t) = self.target_accuracy {
            write!(f, " target_accuracy={t}")?;
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments, one buffer pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<F: Float>(params: &[Tensor<F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update. Parameters are replaced by fresh leaves, so their
/// gradient buffers start at zero.
pub fn adam_step<F: Float>(
    params: &mut [Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::GradientCount {
            params: params.len(),
            grads: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if g.len() != p.numel() {
            return Err(TrainError::GradientCount {
                params: p.numel(),
                grads: g.len(),
            });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data: Vec<F> = p
            .data()
            .iter()
            .zip(g)
            .enumerate()
            .map(|(j, (w, g))| {
                let g = g.as_f64();
                m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
                v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + state.eps);
                F::from_f64_lossy(w.as_f64() - update)
            })
            .collect();
        *p = Tensor::param(p.shape(), data)?;
    }
    Ok(())
}

/// Correct frames over real (non-padding) frames, in evaluation mode.
pub fn frame_accuracy<F: Float>(model: &BtcModel<F>, data: &[FeatureSegment]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for seg in data {
        let pred = model.predict_segment(&seg.features, seg.len())?;
        total += seg.valid;
        correct += pred[..seg.valid]
            .iter()
            .zip(&seg.labels[..seg.valid])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-frame training loss.
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
    /// Mean per-frame loss of each batch, in order.
    pub batch_losses: Vec<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} val_acc={:.6} lr={:e}{}",
            self.epoch,
            self.train_loss,
            self.val_accuracy,
            self.lr,
            if self.improved { " *" } else { "" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub stop: StopReason,
}

impl TrainingReport {
    pub fn diverged(&self) -> bool {
        self.stop == StopReason::Diverged
    }
}

/// Trains with seeded shuffling, dropout and augmentation; returns the model
/// with the best validation accuracy.
pub fn fit(
    model: BtcModel<f32>,
    train: &[FeatureSegment],
    val: &[FeatureSegment],
    cfg: &TrainConfig,
) -> Result<(BtcModel<f32>, TrainingReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let vocab = model.config().vocabulary();
    let mut shuffle_rng = Rng::derive(cfg.seed, 1);
    let mut dropout_rng = Rng::derive(cfg.seed, 2);
    let mut augment_rng = Rng::derive(cfg.seed, 3);

    let mut model = model;
    let mut state = AdamState::new(model.params());
    let mut best = model.clone();
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut lr = cfg.lr;
    let mut stale = 0;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        let mut batch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let segments = batch
                .iter()
                .map(|&i| prepare(&train[i], cfg.augment, &vocab, &mut augment_rng))
                .collect::<Result<Vec<_>>>()?;
            let batch_frames: usize = segments.iter().map(|s| s.valid).sum();
            if batch_frames == 0 {
                continue;
            }
            let loss = batch_step(&mut model, &mut state, &segments, batch_frames, lr, &mut dropout_rng)?;
            batch_losses.push(loss);
            loss_sum += loss * batch_frames as f64;
            frames += batch_frames;
        }
        let train_loss = loss_sum / frames.max(1) as f64;
        if !train_loss.is_finite() {
            epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_accuracy: f64::NAN,
                lr,
                improved: false,
                batch_losses,
            });
            info!("epoch {epoch}: training loss is not finite, stopping");
            stop = StopReason::Diverged;
            break;
        }
        let val_accuracy = frame_accuracy(&model, val)?;
        let improved = val_accuracy > best_accuracy;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
            lr,
            improved,
            batch_losses,
        };
        info!("{record}");
        epochs.push(record);
        if improved {
            best_accuracy = val_accuracy;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
            if cfg.target_accuracy.is_some_and(|t| val_accuracy >= t) {
                stop = StopReason::TargetReached;
                break;
            }
        } else {
            lr *= cfg.decay;
            stale += 1;
            if stale >= cfg.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let report = TrainingReport {
        epochs,
        best_epoch,
        best_accuracy: best_accuracy.max(0.0),
        stop,
    };
    Ok((best, report))
}

fn prepare(
    seg: &FeatureSegment,
    augment: bool,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<FeatureSegment> {
    if !augment {
        return Ok(seg.clone());
    }
    let k = rng.gen_range(MIN_SHIFT..=MAX_SHIFT);
    Ok(shift_segment(seg, k, vocab)?)
}

/// Accumulates gradients over the batch with the loss averaged per frame,
/// then applies one Adam step. Returns the batch's mean per-frame loss.
fn batch_step(
    model: &mut BtcModel<f32>,
    state: &mut AdamState,
    segments: &[FeatureSegment],
    batch_frames: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    model.zero_grad();
    let mut total = 0.0;
    for seg in segments {
        let logits = model.forward(&seg.features, seg.len(), true, rng)?;
        let loss = nll_loss(
            &logits,
            &seg.labels,
            &seg.valid_mask(),
            Reduction::SumOver(batch_frames),
        )?;
        total += loss.item().expect("scalar loss").as_f64();
        loss.backward()?;
    }
    let grads: Vec<Vec<f32>> = model
        .params()
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let mut params = model.params().to_vec();
    adam_step(&mut params, &grads, state, lr)?;
    model.set_params(params)?;
    Ok(total)
}

/// Stable 64-bit FNV-1a hash.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Splits song ids into `(train, validation)` index lists by hashing each id,
/// so a song always lands on the same side. Both sides are non-empty when
/// there are at least two songs and `0 < val_fraction < 1`.
pub fn split_songs(ids: &[&str], val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    const BUCKETS: u64 = 10_000;
    let cut = (val_fraction.clamp(0.0, 1.0) * BUCKETS as f64).round() as u64;
    let bucket = |i: usize| fnv1a(ids[i]) % BUCKETS;
    let (mut val, mut train): (Vec<usize>, Vec<usize>) = (0..ids.len()).partition(|&i| bucket(i) < cut);
    if ids.len() >= 2 && val_fraction > 0.0 && val_fraction < 1.0 {
        if val.is_empty() {
            let pos = (0..train.len()).min_by_key(|&p| bucket(train[p])).expect("non-empty");
            val.push(train.remove(pos));
        } else if train.is_empty() {
            let pos = (0..val.len()).max_by_key(|&p| bucket(val[p])).expect("non-empty");
            train.push(val.remove(pos));
        }
    }
    (train, val)
}

/// A song as stored on disk: raw CQT magnitudes plus its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub id: String,
    pub features: FeatureMatrix,
    pub track: AnnotationTrack,
}

/// Normalized, labeled segments ready for [`fit`].
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stats: NormStats,
    pub train: Vec<FeatureSegment>,
    pub val: Vec<FeatureSegment>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Frames relabeled as no-chord because their chord is outside `vocab`.
    pub folded: usize,
}

/// Splits songs by id, fits normalization statistics on the training songs
/// only, and cuts both sides into `seq_len`-frame segments (overlapping for
/// training, non-overlapping for validation).
pub fn prepare_dataset(
    songs: &[Song],
    vocab: &Vocabulary,
    val_fraction: f64,
    seq_len: usize,
) -> Result<PreparedData> {
    let ids: Vec<&str> = songs.iter().map(|s| s.id.as_str()).collect();
    let (train_ix, val_ix) = split_songs(&ids, val_fraction);
    if train_ix.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val_ix.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let logs = songs
        .iter()
        .map(|s| log_compress(&s.features, LOG_EPS))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stats = fit_norm_stats(train_ix.iter().map(|&i| &logs[i]))?;
    let mut folded = 0;
    let mut cut = |ix: &[usize], mode: SegmentMode| -> Result<Vec<FeatureSegment>> {
        let mut out = Vec::new();
        for &i in ix {
            let song = &songs[i];
            let norm = apply_norm(&logs[i], &stats);
            let aligned = align_labels(&song.track, norm.frames(), norm.frame_secs(), vocab)?;
            folded += aligned.folded;
            out.extend(segment(&song.id, &norm, &aligned.labels, seq_len, mode, vocab.no_chord_index()));
        }
        Ok(out)
    };
    let train = cut(&train_ix, SegmentMode::train())?;
    let val = cut(&val_ix, SegmentMode::Inference)?;
    Ok(PreparedData {
        stats,
        train,
        val,
        train_ids: train_ix.iter().map(|&i| songs[i].id.clone()).collect(),
        val_ids: val_ix.iter().map(|&i| songs[i].id.clone()).collect(),
        folded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut params = vec![Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[vec![0.0; 3]], &mut state, 0.1).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 0.5]);
        assert!(params[0].requires_grad());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut params = vec![Tensor::<f64>::param(&[3], vec![0.0; 3]).unwrap()];
        let mut state = AdamState::new(&params);
        let g = vec![0.5, -3.0, 1e-3];
        adam_step(&mut params, std::slice::from_ref(&g), &mut state, 1e-2).unwrap();
        for (w, g) in params[0].data().iter().zip(&g) {
            let expected = -1e-2 * g / (g.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        let mut params = vec![Tensor::<f64>::param(&[1], vec![1.0]).unwrap()];
        let mut state = AdamState::new(&params);
        let mut reached = None;
        for step in 1..=2000 {
            let w = params[0].data()[0];
            adam_step(&mut params, &[vec![2.0 * w]], &mut state, 1e-2).unwrap();
            if reached.is_none() && params[0].data()[0].abs() < 1e-3 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!(params[0].data()[0].abs() < 1e-3);
    }

    #[test]
    fn adam_rejects_mismatched_gradients() {
        let mut params = vec![Tensor::<f64>::param(&[2], vec![0.0; 2]).unwrap()];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &[], &mut state, 0.1).is_err());
        assert!(adam_step(&mut params, &[vec![0.0; 3]], &mut state, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { decay: 1.0, ..TrainConfig::default() },
            TrainConfig { decay: 0.0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad}");
        }
        let mut c = TrainConfig::default();
        assert!(c.set("lr", "0.001").unwrap());
        assert!(c.set("augment", "true").unwrap());
        assert!(!c.set("model_dim", "4").unwrap());
        assert!(c.set("patience", "-1").is_err());
        assert_eq!((c.lr, c.augment), (0.001, true));
    }

    #[test]
    fn split_is_stable_and_disjoint() {
        let names: Vec<String> = (0..200).map(|i| format!("song_{i:04}")).collect();
        let ids: Vec<&str> = names.iter().map(String::as_str).collect();
        let (train, val) = split_songs(&ids, 0.2);
        assert_eq!(split_songs(&ids, 0.2), (train.clone(), val.clone()));
        assert_eq!(train.len() + val.len(), 200);
        assert!(train.iter().all(|i| !val.contains(i)));
        assert!((20..=60).contains(&val.len()), "{}", val.len());

        let (t, v) = split_songs(&ids[..2], 0.01);
        assert_eq!((t.len(), v.len()), (1, 1));
        let (t, v) = split_songs(&ids[..2], 0.99);
        assert_eq!((t.len(), v.len()), (1, 1));
    }
}
