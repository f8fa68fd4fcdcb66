//! Synthetic chord songs rendered directly as CQT magnitudes.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{FeatureMatrix, BINS_PER_OCTAVE, BINS_PER_SEMITONE, HOP, N_BINS, SAMPLE_RATE};
use crate::annotation::AnnotationTrack;
use crate::chord::{ChordLabel, Vocabulary};
use crate::tensor::Rng;

const NO_CHORD_PROB: f64 = 0.05;
const MIN_RUN: usize = 5;
const MAX_RUN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub songs: usize,
    pub vocab: Vocabulary,
    pub noise_sigma: f64,
    pub frames_per_song: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            songs: 200,
            vocab: Vocabulary::majmin(),
            noise_sigma: 0.1,
            frames_per_song: 216,
            seed: 0,
        }
    }
}

/// Noiseless magnitude frame for a chord: energy `0.5^(oct-2)` at bin
/// `(oct-1)·24 + 2·pc` for octaves 2..=5. No-chord is silent.
pub fn chord_frame(label: &ChordLabel) -> Vec<f32> {
    let mut frame = vec![0.0f32; N_BINS];
    if let Ok(pcs) = label.pitch_class_set() {
        for pc in pcs {
            for oct in 2..=5usize {
                let bin = (oct - 1) * BINS_PER_OCTAVE + BINS_PER_SEMITONE * pc as usize;
                frame[bin] += 0.5f32.powi(oct as i32 - 2);
            }
        }
    }
    frame
}

/// One song: a random progression of runs of 5..=20 frames, with magnitudes
/// plus Gaussian noise clamped at zero.
pub fn synth_song(
    frames: usize,
    vocab: &Vocabulary,
    noise_sigma: f64,
    rng: &mut Rng,
) -> (FeatureMatrix, AnnotationTrack) {
    let pitched = vocab.pitched_labels();
    let mut labels = Vec::with_capacity(frames);
    while labels.len() < frames {
        let run = rng.gen_range(MIN_RUN..=MAX_RUN);
        let chord = if rng.uniform() < NO_CHORD_PROB {
            ChordLabel::NoChord
        } else {
            *pitched.choose(rng).expect("vocabulary has pitched entries")
        };
        labels.extend(std::iter::repeat_n(chord, run.min(frames - labels.len())));
    }
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("valid sigma");
    let mut data = Vec::with_capacity(frames * N_BINS);
    for label in &labels {
        for v in chord_frame(label) {
            let n = if noise_sigma > 0.0 { noise.sample(rng) as f32 } else { 0.0 };
            data.push((v + n).max(0.0));
        }
    }
    let features = FeatureMatrix::new(frames, data).expect("synthetic shape is valid");
    let track = AnnotationTrack::from_frames(&labels, HOP as f64 / SAMPLE_RATE);
    (features, track)
}

/// `(song id, features, annotation)` for every song. Song `i` draws from its
/// own stream derived from `(seed, i)`.
pub fn synth_dataset(cfg: &SynthConfig) -> Vec<(String, FeatureMatrix, AnnotationTrack)> {
    (0..cfg.songs)
        .map(|i| {
            let mut rng = Rng::derive(cfg.seed, i as u64);
            let (m, t) = synth_song(cfg.frames_per_song, &cfg.vocab, cfg.noise_sigma, &mut rng);
            (format!("song_{i:04}"), m, t)
        })
        .collect()
}
