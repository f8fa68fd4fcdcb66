//! `BTCF` feature binary.
//!
//! ```text
//! "BTCF" | u32 version | u32 frames | u32 bins | f64 sample_rate | u32 hop
//! | frames·bins × f32, frame-major
//! ```

use std::path::Path;

use super::{read_bytes, write_atomic, Cursor, IoError, Result};
use crate::features::FeatureMatrix;

pub const BTCF_MAGIC: [u8; 4] = *b"BTCF";
pub const BTCF_VERSION: u32 = 1;

pub fn encode_btcf(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * m.data().len());
    out.extend_from_slice(&BTCF_MAGIC);
    out.extend_from_slice(&BTCF_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.bins() as u32).to_le_bytes());
    out.extend_from_slice(&m.sample_rate.to_le_bytes());
    out.extend_from_slice(&m.hop.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_btcf(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut c = Cursor::new(bytes);
    c.magic(BTCF_MAGIC)?;
    let version = c.u32("version")?;
    if version != BTCF_VERSION {
        return Err(IoError::UnsupportedVersion {
            format: "BTCF",
            version,
        });
    }
    let frames = c.u32("frame count")? as usize;
    let bins = c.u32("bin count")? as usize;
    let sample_rate = c.f64("sample rate")?;
    let hop = c.u32("hop")?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(IoError::Header(format!("sample rate {sample_rate}")));
    }
    if hop == 0 {
        return Err(IoError::Header("hop is zero".into()));
    }
    let n = frames
        .checked_mul(bins)
        .ok_or_else(|| IoError::Header(format!("{frames}×{bins} overflows")))?;
    let data = c.f32s(n, "feature payload")?;
    c.finish()?;
    Ok(FeatureMatrix::with_timing(frames, bins, data, sample_rate, hop)?)
}

pub fn read_btcf(path: &Path) -> Result<FeatureMatrix> {
    decode_btcf(&read_bytes(path)?)
}

pub fn write_btcf(m: &FeatureMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &encode_btcf(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureError;

    fn sample() -> FeatureMatrix {
        FeatureMatrix::new(3, (0..432).map(|i| i as f32 * 0.25 - 7.0).collect()).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let bytes = encode_btcf(&m);
        assert_eq!(bytes.len(), 28 + 432 * 4);
        assert_eq!(decode_btcf(&bytes).unwrap(), m);
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode_btcf(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_btcf(&bad), Err(IoError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_btcf(&bad), Err(IoError::UnsupportedVersion { version: 2, .. })));
        assert!(matches!(decode_btcf(&good[..good.len() - 1]), Err(IoError::Truncated(_))));
        assert!(matches!(decode_btcf(&good[..10]), Err(IoError::Truncated(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_btcf(&long), Err(IoError::TrailingBytes(1))));
        let mut bins = good;
        bins[8..12].copy_from_slice(&4u32.to_le_bytes());
        bins[12..16].copy_from_slice(&108u32.to_le_bytes());
        assert!(matches!(
            decode_btcf(&bins),
            Err(IoError::Feature(FeatureError::BinCount { expected: 144, actual: 108 }))
        ));
        assert!(matches!(decode_btcf(b"BT"), Err(IoError::BadMagic { .. })));
    }
}
