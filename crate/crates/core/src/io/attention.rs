//! Text dumps of attention maps, one file per layer, direction and head.
//!
//! ```text
//! # layer=3 dir=b head=2 T=108
//! 0.5 0.25 0.25 ...      (T rows of T values)
//! ```
//!
//! Layer and head numbers are 1-based.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_text, write_atomic, IoError, Result};
use crate::net::{AttentionMap, AttentionMapSet, Direction};

const ROW_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub layer: usize,
    pub dir: Direction,
    pub head: usize,
    pub map: AttentionMap,
}

pub fn attention_file_name(layer: usize, dir: Direction, head: usize) -> String {
    format!("layer{layer:02}_{}_head{head}.txt", dir.tag())
}

/// Values are written in shortest round-trip form, so parsing restores them
/// bit for bit.
pub fn format_attention(dump: &AttentionDump) -> String {
    let t = dump.map.size;
    let mut out = format!(
        "# layer={} dir={} head={} T={t}\n",
        dump.layer,
        dump.dir.tag(),
        dump.head
    );
    for i in 0..t {
        let row = dump.map.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Option<(usize, Direction, usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut fields = rest.split_whitespace();
    let mut value = |key: &str| fields.next()?.strip_prefix(key)?.strip_prefix('=');
    let layer = value("layer")?.parse().ok()?;
    let dir_text = value("dir")?;
    let head = value("head")?.parse().ok()?;
    let t = value("T")?.parse().ok()?;
    if fields.next().is_some() {
        return None;
    }
    let mut chars = dir_text.chars();
    let dir = Direction::from_tag(chars.next()?)?;
    if chars.next().is_some() {
        return None;
    }
    Some((layer, dir, head, t))
}

pub fn parse_attention(text: &str) -> Result<AttentionDump> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: String| IoError::Line { line, message };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let (layer, dir, head, t) = parse_header(header)
        .ok_or_else(|| bad(1, "expected `# layer=<i> dir=<f|b> head=<h> T=<T>`".into()))?;
    if layer == 0 || head == 0 || t == 0 {
        return Err(bad(1, "layer, head and T must be positive".into()));
    }
    // Each row needs at least 2·T - 1 bytes, which bounds T before allocating.
    if t.saturating_mul(t.saturating_mul(2).saturating_sub(1)) > text.len() {
        return Err(IoError::Truncated("attention rows"));
    }
    let mut probs = Vec::with_capacity(t * t);
    for row in 0..t {
        let (i, line) = lines.next().ok_or(IoError::Truncated("attention rows"))?;
        let n = i + 1;
        let mut count = 0;
        let mut total = 0.0f64;
        for field in line.split_whitespace() {
            let v: f32 = field
                .parse()
                .map_err(|_| bad(n, format!("bad value {field:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(n, format!("probability {v} outside [0, 1]")));
            }
            count += 1;
            if count > t {
                break;
            }
            total += v as f64;
            probs.push(v);
        }
        if count != t {
            return Err(bad(n, format!("row {} has {count} values, expected {t}", row + 1)));
        }
        if (total - 1.0).abs() > ROW_TOLERANCE {
            return Err(bad(n, format!("row {} sums to {total}", row + 1)));
        }
    }
    if let Some((i, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(bad(i + 1, "unexpected content after the last row".into()));
    }
    Ok(AttentionDump {
        layer,
        dir,
        head,
        map: AttentionMap { size: t, probs },
    })
}

pub fn read_attention(path: &Path) -> Result<AttentionDump> {
    parse_attention(&read_text(path)?)
}

/// Binary graymap (`P5`), one byte `round(255·p)` per entry.
pub fn to_pgm(map: &AttentionMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.size, map.size).into_bytes();
    out.extend(map.probs.iter().map(|p| (255.0 * p.clamp(0.0, 1.0)).round() as u8));
    out
}

/// Writes every head of every direction for the selected 1-based layers
/// (all layers when `layers` is `None`). Returns the written paths in order.
pub fn write_attention(
    maps: &AttentionMapSet,
    out_dir: &Path,
    layers: Option<&[usize]>,
    pgm: bool,
) -> Result<Vec<PathBuf>> {
    let all: Vec<usize> = (1..=maps.layers.len()).collect();
    let selected = layers.unwrap_or(&all);
    if let Some(l) = selected.iter().find(|l| **l == 0 || **l > maps.layers.len()) {
        return Err(IoError::Header(format!(
            "layer {l} outside 1..={}",
            maps.layers.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::File {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for &layer in selected {
        for dir in Direction::BOTH {
            let mut head = 1;
            while let Some(map) = maps.get(layer - 1, dir, head - 1) {
                let dump = AttentionDump {
                    layer,
                    dir,
                    head,
                    map: map.clone(),
                };
                let path = out_dir.join(attention_file_name(layer, dir, head));
                write_atomic(&path, format_attention(&dump).as_bytes())?;
                written.push(path.clone());
                if pgm {
                    let image = path.with_extension("pgm");
                    write_atomic(&image, &to_pgm(map))?;
                    written.push(image);
                }
                head += 1;
            }
        }
    }
    Ok(written)
}
