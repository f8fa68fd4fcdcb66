use std::fmt;

use crate::chord::{VocabKind, Vocabulary};
use crate::features::{N_BINS, SEGMENT_FRAMES};

use super::{NetError, Result};

/// Architecture hyperparameters. Defaults are the best-validation settings:
/// 8 layers, 4 heads, width 128, two width-3 convolutions, dropout 0.2.
#[derive(Debug, Clone, PartialEq)]
pub struct BtcConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub conv_repeats: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub input_bins: usize,
    pub vocab: VocabKind,
    pub seq_len: usize,
}

impl Default for BtcConfig {
    fn default() -> Self {
        BtcConfig {
            n_layers: 8,
            n_heads: 4,
            model_dim: 128,
            conv_repeats: 2,
            kernel: 3,
            dropout: 0.2,
            input_bins: N_BINS,
            vocab: VocabKind::MajMin,
            seq_len: SEGMENT_FRAMES,
        }
    }
}

impl BtcConfig {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.vocab)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary().len()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NetError::Config(msg));
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim, self.n_heads
            ));
        }
        if self.model_dim < 2 || !self.model_dim.is_multiple_of(2) {
            return bad(format!("model dim {} must be even and >= 2", self.model_dim));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel width {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.input_bins == 0 || self.seq_len == 0 {
            return bad("input bins and sequence length must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count:
    /// input projection, then per layer two directional blocks of
    /// {Q, K, V, O projections; two layer-norm gain/bias pairs; `n_C`
    /// convolutions} plus the `2d → d` combine projection, then the logit head.
    pub fn parameter_count(&self) -> usize {
        let d = self.model_dim;
        let v = self.vocab_size();
        let direction = 4 * (d * d + d) + 2 * (2 * d) + self.conv_repeats * (d * d * self.kernel + d);
        let layer = 2 * direction + (2 * d * d + d);
        self.input_bins * d + d + self.n_layers * layer + d * v + v
    }

    /// `key=value` lines, one per field.
    pub fn to_lines(&self) -> Vec<(String, String)> {
        vec![
            ("n_layers".into(), self.n_layers.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("model_dim".into(), self.model_dim.to_string()),
            ("conv_repeats".into(), self.conv_repeats.to_string()),
            ("kernel".into(), self.kernel.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("input_bins".into(), self.input_bins.to_string()),
            ("vocab".into(), self.vocab.to_string()),
            ("seq_len".into(), self.seq_len.to_string()),
        ]
    }

    /// Applies one `key=value` override. Returns `Ok(false)` for keys that do
    /// not belong to the architecture.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| NetError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "n_layers" => self.n_layers = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "model_dim" => self.model_dim = num(key, value)?,
            "conv_repeats" => self.conv_repeats = num(key, value)?,
            "kernel" => self.kernel = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "input_bins" => self.input_bins = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "vocab" => {
                self.vocab = value
                    .parse()
                    .map_err(|e: crate::chord::ChordError| NetError::Config(e.to_string()))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for BtcConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} heads={} dim={} conv_repeats={} kernel={} dropout={} bins={} vocab={} seq_len={}",
            self.n_layers,
            self.n_heads,
            self.model_dim,
            self.conv_repeats,
            self.kernel,
            self.dropout,
            self.input_bins,
            self.vocab,
            self.seq_len
        )
    }
}
