//! Raw features in, chord annotation out.

use thiserror::Error;

use crate::annotation::AnnotationTrack;
use crate::chord::ChordError;
use crate::features::{apply_norm, log_compress, FeatureError, FeatureMatrix, NormStats, LOG_EPS};
use crate::net::{BtcModel, NetError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("features have {actual} bins, model expects {expected}")]
    BinMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Chord(#[from] ChordError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Log compression followed by the training-set normalization.
pub fn normalize(raw: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix> {
    Ok(apply_norm(&log_compress(raw, LOG_EPS)?, stats))
}

/// Predicts every frame and merges runs of equal labels into intervals on
/// frame boundaries, tiling `[0, T·hop/sr)`.
pub fn transcribe(
    model: &BtcModel<f32>,
    stats: &NormStats,
    raw: &FeatureMatrix,
) -> Result<AnnotationTrack> {
    let expected = model.config().input_bins;
    if raw.bins() != expected {
        return Err(PipelineError::BinMismatch {
            expected,
            actual: raw.bins(),
        });
    }
    let features = normalize(raw, stats)?;
    let vocab = model.config().vocabulary();
    let labels = model
        .predict(&features)?
        .into_iter()
        .map(|i| vocab.from_index(i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AnnotationTrack::from_frames(&labels, features.frame_secs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::BtcConfig;
    use crate::tensor::Rng;

    #[test]
    fn output_tiles_the_song() {
        let cfg = BtcConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 8,
            conv_repeats: 1,
            seq_len: 16,
            ..BtcConfig::default()
        };
        let model = BtcModel::new(cfg, &mut Rng::seed_from(0)).unwrap();
        let raw = FeatureMatrix::new(37, (0..37 * 144).map(|i| (i % 7) as f32).collect()).unwrap();
        let stats = NormStats::new(0.5, 2.0).unwrap();
        let track = transcribe(&model, &stats, &raw).unwrap();
        assert_eq!(track.start(), Some(0.0));
        let end = track.end().unwrap();
        assert!((end - 37.0 * raw.frame_secs()).abs() < 1e-9);
        let ivs = track.intervals();
        assert!(ivs.windows(2).all(|w| w[0].end == w[1].start && w[0].label != w[1].label));
        let again = transcribe(&model, &stats, &raw).unwrap();
        assert_eq!(track, again);
    }
}
