//! On-disk formats: `.lab` annotations, BTCF feature binaries, BTCW
//! checkpoints, attention dumps and `key=value` text files.
//!
//! Binary formats are little-endian with a four-byte magic and a `u32`
//! version. Every file is written to a temporary sibling and renamed into
//! place.

mod attention;
mod btcf;
mod checkpoint;
mod kv;
mod lab;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features::FeatureError;
use crate::net::NetError;

pub use attention::{
    attention_file_name, format_attention, parse_attention, read_attention, to_pgm, write_attention,
    AttentionDump,
};
pub use btcf::{decode_btcf, encode_btcf, read_btcf, write_btcf, BTCF_MAGIC, BTCF_VERSION};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_model, read_checkpoint, save_model, write_checkpoint,
    Checkpoint, NamedTensor, BTCW_MAGIC, BTCW_VERSION,
};
pub use kv::{format_stats, parse_kv, parse_stats, read_kv};
pub use lab::{format_lab, parse_lab, read_lab, write_lab};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: expected \"{}\", found \"{}\"", expected.escape_ascii(), found.escape_ascii())]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("truncated input: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(file_error(path))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(file_error(path))
}

/// Writes through a temporary file in the same directory, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_error(path))?;
    tmp.write_all(bytes).map_err(file_error(path))?;
    tmp.as_file().sync_all().map_err(file_error(path))?;
    tmp.persist(path).map_err(|e| IoError::File {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(IoError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = &self.buf[..self.buf.len().min(4)];
        if found != expected {
            return Err(IoError::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    /// `n` little-endian `f32` values; the length is checked before allocating.
    pub(crate) fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or(IoError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(IoError::TrailingBytes(n)),
        }
    }
}
