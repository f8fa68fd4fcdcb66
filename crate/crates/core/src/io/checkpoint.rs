//! `BTCW` checkpoint.
//!
//! ```text
//! "BTCW" | u32 version | u32 config_len | config_len bytes of `key=value` lines
//! | u32 n_tensors | per tensor: u16 name_len | name | u8 ndim | ndim × u32 | f32 data
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{parse_kv, read_bytes, write_atomic, Cursor, IoError, Result};
use crate::features::NormStats;
use crate::net::{BtcConfig, BtcModel};
use crate::tensor::Tensor;

pub const BTCW_MAGIC: [u8; 4] = *b"BTCW";
pub const BTCW_VERSION: u32 = 1;

const NORM_MEAN: &str = "norm_mean";
const NORM_VARIANCE: &str = "norm_variance";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Decoded checkpoint contents, before the model is rebuilt.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Architecture lines followed by the normalization statistics, if any.
    pub fn from_model(model: &BtcModel<f32>, stats: Option<&NormStats>) -> Self {
        let mut config = model.config().to_lines();
        if let Some(s) = stats {
            config.push((NORM_MEAN.into(), s.mean.to_string()));
            config.push((NORM_VARIANCE.into(), s.variance.to_string()));
        }
        let tensors = model
            .named_params()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint { config, tensors }
    }

    pub fn model_config(&self) -> Result<BtcConfig> {
        let mut cfg = BtcConfig::default();
        for (k, v) in &self.config {
            if !cfg.set(k, v)? && k != NORM_MEAN && k != NORM_VARIANCE {
                return Err(IoError::Header(format!("unknown checkpoint key {k:?}")));
            }
        }
        Ok(cfg)
    }

    pub fn stats(&self) -> Result<Option<NormStats>> {
        let get = |key: &str| {
            self.config
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| {
                    v.parse::<f64>()
                        .map_err(|_| IoError::Header(format!("bad value {v:?} for {key}")))
                })
                .transpose()
        };
        match (get(NORM_MEAN)?, get(NORM_VARIANCE)?) {
            (Some(mean), Some(variance)) => Ok(Some(NormStats::new(mean, variance)?)),
            (None, None) => Ok(None),
            _ => Err(IoError::Header(
                "normalization mean and variance must appear together".into(),
            )),
        }
    }

    pub fn into_model(self) -> Result<(BtcModel<f32>, Option<NormStats>)> {
        let cfg = self.model_config()?;
        let stats = self.stats()?;
        let named = self
            .tensors
            .into_iter()
            .map(|t| Ok((t.name, Tensor::new(&t.shape, t.data).map_err(crate::net::NetError::from)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((BtcModel::from_named(cfg, named)?, stats))
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut config = String::new();
    for (k, v) in &ckpt.config {
        let _ = writeln!(config, "{k}={v}");
    }
    let mut out = Vec::new();
    out.extend_from_slice(&BTCW_MAGIC);
    out.extend_from_slice(&BTCW_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for t in &ckpt.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(bytes);
    c.magic(BTCW_MAGIC)?;
    let version = c.u32("version")?;
    if version != BTCW_VERSION {
        return Err(IoError::UnsupportedVersion {
            format: "BTCW",
            version,
        });
    }
    let config_len = c.u32("config length")? as usize;
    let text = std::str::from_utf8(c.take(config_len, "config text")?)
        .map_err(|_| IoError::Utf8("checkpoint config"))?;
    let config = parse_kv(text)?;
    let n_tensors = c.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..n_tensors {
        let name_len = c.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| IoError::Utf8("tensor name"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(IoError::DuplicateTensor(name));
        }
        let ndim = c.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("tensor dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| IoError::Header(format!("tensor {name} shape {shape:?} overflows")))?;
        let data = c.f32s(n, "tensor data")?;
        tensors.push(NamedTensor { name, shape, data });
    }
    c.finish()?;
    Ok(Checkpoint { config, tensors })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn save_model(model: &BtcModel<f32>, stats: Option<&NormStats>, path: &Path) -> Result<()> {
    write_checkpoint(&Checkpoint::from_model(model, stats), path)
}

pub fn load_model(path: &Path) -> Result<(BtcModel<f32>, Option<NormStats>)> {
    read_checkpoint(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn tiny() -> BtcModel<f32> {
        let cfg = BtcConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 8,
            conv_repeats: 1,
            seq_len: 4,
            ..BtcConfig::default()
        };
        BtcModel::new(cfg, &mut Rng::seed_from(3)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let model = tiny();
        let stats = NormStats::new(-3.123456789012345, 0.1 + 0.2).unwrap();
        let ckpt = Checkpoint::from_model(&model, Some(&stats));
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let (loaded, loaded_stats) = back.into_model().unwrap();
        assert_eq!(loaded_stats, Some(stats));
        assert_eq!(loaded.config(), model.config());
        let probe: Vec<f32> = (0..4 * 144).map(|i| (i as f32 * 0.37).sin()).collect();
        assert_eq!(loaded.logits(&probe, 4).unwrap().data(), model.logits(&probe, 4).unwrap().data());
    }

    #[test]
    fn corruptions_give_typed_errors() {
        let good = encode_checkpoint(&Checkpoint::from_model(&tiny(), None));
        let mut bad = good.clone();
        bad[3] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(IoError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(IoError::UnsupportedVersion { version: 9, .. })));
        assert!(matches!(decode_checkpoint(&good[..good.len() - 3]), Err(IoError::Truncated(_))));

        let t = NamedTensor { name: "a".into(), shape: vec![1], data: vec![0.0] };
        let dup = Checkpoint { config: vec![], tensors: vec![t.clone(), t] };
        assert!(matches!(
            decode_checkpoint(&encode_checkpoint(&dup)),
            Err(IoError::DuplicateTensor(n)) if n == "a"
        ));
    }

    #[test]
    fn model_mismatches_are_reported() {
        let mut ckpt = Checkpoint::from_model(&tiny(), None);
        ckpt.tensors.pop();
        assert!(matches!(ckpt.clone().into_model(), Err(IoError::Net(_))));
        ckpt.config.push(("mystery".into(), "1".into()));
        assert!(matches!(ckpt.model_config(), Err(IoError::Header(_))));
    }
}
