//! Feature pipeline: log compression, global z-normalization, frame-label
//! alignment, fixed-length segmentation and pitch augmentation in CQT space.

mod synth;

use thiserror::Error;

use crate::annotation::AnnotationTrack;
use crate::chord::{ChordError, ChordLabel, Vocabulary};

pub use synth::{chord_frame, synth_dataset, synth_song, SynthConfig};

/// 6 octaves × 24 bins from C1.
pub const N_BINS: usize = 144;
pub const BINS_PER_OCTAVE: usize = 24;
pub const BINS_PER_SEMITONE: usize = BINS_PER_OCTAVE / 12;
pub const SAMPLE_RATE: f64 = 22050.0;
pub const HOP: u32 = 2048;
/// floor(10 s · 22050 / 2048) + 1 frames.
pub const SEGMENT_FRAMES: usize = 108;
/// Half a window: consecutive training windows overlap by ~5 s.
pub const TRAIN_STRIDE: usize = 54;
pub const LOG_EPS: f64 = 1e-6;
/// Range of random training transpositions.
pub const MIN_SHIFT: i32 = -5;
pub const MAX_SHIFT: i32 = 6;
/// Largest transposition [`pitch_shift`] accepts in either direction, so
/// every training shift can be undone.
pub const SHIFT_LIMIT: i32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature matrix needs {expected} values for {frames}×{bins}, got {actual}")]
    Shape {
        frames: usize,
        bins: usize,
        expected: usize,
        actual: usize,
    },
    #[error("expected {expected} bins, got {actual}")]
    BinCount { expected: usize, actual: usize },
    #[error("non-finite feature value at frame {frame}, bin {bin}")]
    NonFinite { frame: usize, bin: usize },
    #[error("negative magnitude {value} at frame {frame}, bin {bin}")]
    Negative { frame: usize, bin: usize, value: f32 },
    #[error("normalization statistics need a non-empty training set")]
    EmptyTrainingSet,
    #[error("training features have zero variance")]
    ZeroVariance,
    #[error("pitch shift {0} outside [-6, 6] semitones")]
    ShiftOutOfRange(i32),
    #[error("log epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Chord(#[from] ChordError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Frame-major `T × bins` CQT magnitudes (or their log / normalized form).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
    pub sample_rate: f64,
    pub hop: u32,
}

impl FeatureMatrix {
    pub fn new(frames: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_timing(frames, N_BINS, data, SAMPLE_RATE, HOP)
    }

    pub fn with_timing(
        frames: usize,
        bins: usize,
        data: Vec<f32>,
        sample_rate: f64,
        hop: u32,
    ) -> Result<Self> {
        if bins != N_BINS {
            return Err(FeatureError::BinCount {
                expected: N_BINS,
                actual: bins,
            });
        }
        if data.len() != frames * bins {
            return Err(FeatureError::Shape {
                frames,
                bins,
                expected: frames * bins,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                frame: i / bins,
                bin: i % bins,
            });
        }
        Ok(FeatureMatrix {
            frames,
            bins,
            data,
            sample_rate,
            hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Duration of one frame in seconds.
    pub fn frame_secs(&self) -> f64 {
        self.hop as f64 / self.sample_rate
    }

    fn map_values(&self, data: Vec<f32>) -> Self {
        FeatureMatrix {
            frames: self.frames,
            bins: self.bins,
            data,
            sample_rate: self.sample_rate,
            hop: self.hop,
        }
    }
}

/// `ln(S + eps)` elementwise.
pub fn log_compress(s: &FeatureMatrix, eps: f64) -> Result<FeatureMatrix> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(FeatureError::BadEpsilon(eps));
    }
    if let Some(i) = s.data.iter().position(|v| *v < 0.0) {
        return Err(FeatureError::Negative {
            frame: i / s.bins,
            bin: i % s.bins,
            value: s.data[i],
        });
    }
    let data = s
        .data
        .iter()
        .map(|v| (*v as f64 + eps).ln() as f32)
        .collect();
    Ok(s.map_values(data))
}

/// Global mean and variance over every log-CQT value of the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub variance: f64,
}

impl NormStats {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !variance.is_finite() || variance <= 0.0 || !mean.is_finite() {
            return Err(FeatureError::ZeroVariance);
        }
        Ok(NormStats { mean, variance })
    }
}

pub fn fit_norm_stats<'a, I>(training: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
    I::IntoIter: Clone,
{
    let iter = training.into_iter();
    let mut count = 0usize;
    let mut total = 0.0f64;
    for m in iter.clone() {
        count += m.data.len();
        total += m.data.iter().map(|v| *v as f64).sum::<f64>();
    }
    if count == 0 {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let mean = total / count as f64;
    let mut sq = 0.0f64;
    for m in iter {
        sq += m
            .data
            .iter()
            .map(|v| {
                let d = *v as f64 - mean;
                d * d
            })
            .sum::<f64>();
    }
    let variance = sq / count as f64;
    if variance <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(FeatureError::ZeroVariance);
    }
    NormStats::new(mean, variance)
}

pub fn apply_norm(s: &FeatureMatrix, stats: &NormStats) -> FeatureMatrix {
    let inv = 1.0 / stats.variance.sqrt();
    let data = s
        .data
        .iter()
        .map(|v| ((*v as f64 - stats.mean) * inv) as f32)
        .collect();
    s.map_values(data)
}

/// Per-frame vocabulary indices for one song.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub labels: Vec<usize>,
    /// Frames whose chord had no representative in the vocabulary and were
    /// relabeled as no-chord.
    pub folded: usize,
}

/// Labels frame `t` with the interval containing its center
/// `(t + 0.5)·hop/sr`; uncovered frames get no-chord.
pub fn align_labels(
    track: &AnnotationTrack,
    frames: usize,
    frame_secs: f64,
    vocab: &Vocabulary,
) -> Result<Alignment> {
    let mut folded = 0;
    let mut labels = Vec::with_capacity(frames);
    for t in 0..frames {
        let center = (t as f64 + 0.5) * frame_secs;
        let label = track.label_at(center).unwrap_or(ChordLabel::NoChord);
        let index = match vocab.to_index(&label) {
            Ok(i) => i,
            Err(ChordError::NotInVocabulary { .. }) => {
                folded += 1;
                vocab.no_chord_index()
            }
            Err(e) => return Err(e.into()),
        };
        labels.push(index);
    }
    if folded > 0 {
        log::warn!("{folded} frames folded to no-chord for the {} vocabulary", vocab.kind());
    }
    Ok(Alignment { labels, folded })
}

/// Fixed-length model input window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    /// `len × N_BINS`, frame-major.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    /// Leading frames that hold real data; the tail is zero padding.
    pub valid: usize,
    pub song_id: String,
    pub start_frame: usize,
}

impl FeatureSegment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|t| t < self.valid).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    /// Windows at a stride, with a final window anchored at `T - len`.
    Train { stride: usize },
    /// Non-overlapping windows with a zero-padded tail.
    Inference,
}

impl SegmentMode {
    pub fn train() -> Self {
        SegmentMode::Train {
            stride: TRAIN_STRIDE,
        }
    }
}

/// Window start frames covering `0..frames`.
pub fn segment_starts(frames: usize, len: usize, mode: SegmentMode) -> Vec<usize> {
    if frames <= len {
        return vec![0];
    }
    match mode {
        SegmentMode::Train { stride } => {
            let stride = stride.max(1);
            let mut starts: Vec<usize> = (0..=frames - len).step_by(stride).collect();
            if starts.last().copied() != Some(frames - len) {
                starts.push(frames - len);
            }
            starts
        }
        SegmentMode::Inference => (0..frames).step_by(len).collect(),
    }
}

/// Cuts a song into fixed-length segments. Windows that run past the end are
/// zero-padded and their padded frames marked invalid.
pub fn segment(
    song_id: &str,
    s: &FeatureMatrix,
    labels: &[usize],
    len: usize,
    mode: SegmentMode,
    pad_label: usize,
) -> Vec<FeatureSegment> {
    assert_eq!(labels.len(), s.frames, "one label per frame");
    segment_starts(s.frames, len, mode)
        .into_iter()
        .map(|start| {
            let valid = len.min(s.frames - start);
            let mut features = vec![0.0f32; len * s.bins];
            features[..valid * s.bins]
                .copy_from_slice(&s.data[start * s.bins..(start + valid) * s.bins]);
            let mut seg_labels = vec![pad_label; len];
            seg_labels[..valid].copy_from_slice(&labels[start..start + valid]);
            FeatureSegment {
                features,
                labels: seg_labels,
                valid,
                song_id: song_id.to_string(),
                start_frame: start,
            }
        })
        .collect()
}

fn check_shift(k: i32) -> Result<()> {
    if (-SHIFT_LIMIT..=SHIFT_LIMIT).contains(&k) {
        Ok(())
    } else {
        Err(FeatureError::ShiftOutOfRange(k))
    }
}

/// Moves each frame's bin `b` to `b + 2k`, filling vacated bins with `fill`.
fn shift_frames(data: &mut [f32], bins: usize, k: i32, fill: f32) {
    let offset = k.unsigned_abs() as usize * BINS_PER_SEMITONE;
    for frame in data.chunks_mut(bins) {
        if offset >= bins {
            frame.fill(fill);
        } else if k > 0 {
            frame.copy_within(0..bins - offset, offset);
            frame[..offset].fill(fill);
        } else if k < 0 {
            frame.copy_within(offset..bins, 0);
            frame[bins - offset..].fill(fill);
        }
    }
}

/// Transposes a song by `k` semitones in feature space (2 bins per semitone)
/// and its annotation by the same amount.
pub fn pitch_shift(
    s: &FeatureMatrix,
    track: &AnnotationTrack,
    k: i32,
) -> Result<(FeatureMatrix, AnnotationTrack)> {
    check_shift(k)?;
    let fill = s.data.iter().copied().fold(f32::INFINITY, f32::min);
    let mut data = s.data.clone();
    shift_frames(&mut data, s.bins, k, fill);
    Ok((s.map_values(data), track.transpose(k)))
}

/// [`pitch_shift`] for an already-labeled segment; padding stays untouched.
pub fn shift_segment(seg: &FeatureSegment, k: i32, vocab: &Vocabulary) -> Result<FeatureSegment> {
    check_shift(k)?;
    let mut out = seg.clone();
    let real = &mut out.features[..seg.valid * N_BINS];
    let fill = real.iter().copied().fold(f32::INFINITY, f32::min);
    shift_frames(real, N_BINS, k, fill);
    for label in out.labels.iter_mut().take(seg.valid) {
        *label = vocab.transpose_index(*label, k)?;
    }
    Ok(out)
}
