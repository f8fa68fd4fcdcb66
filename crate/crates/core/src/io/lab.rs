use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic, IoError, Result};
use crate::annotation::{AnnotationTrack, Interval};
use crate::chord::parse_chord;

/// Parses `start end chord` lines. Blank lines and `#` comments are skipped.
pub fn parse_lab(text: &str) -> Result<AnnotationTrack> {
    let mut intervals = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let bad = |message: String| IoError::Line { line, message };
        let mut fields = content.split_whitespace();
        let (Some(start), Some(end), Some(chord)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected `start end chord`".into()));
        };
        if fields.next().is_some() {
            return Err(bad("too many fields".into()));
        }
        let time = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| bad(format!("bad time {s:?}")))
        };
        let (start, end) = (time(start)?, time(end)?);
        if start >= end {
            return Err(bad(format!("start {start} is not before end {end}")));
        }
        let label = parse_chord(chord).map_err(|e| bad(e.to_string()))?;
        intervals.push(Interval::new(start, end, label));
        lines.push(line);
    }
    AnnotationTrack::new(intervals).map_err(|e| IoError::Line {
        line: lines[e.index()],
        message: e.to_string(),
    })
}

/// One line per interval, times with six decimals.
pub fn format_lab(track: &AnnotationTrack) -> String {
    let mut out = String::new();
    for iv in track.intervals() {
        let _ = writeln!(out, "{:.6} {:.6} {}", iv.start, iv.end, iv.label);
    }
    out
}

pub fn read_lab(path: &Path) -> Result<AnnotationTrack> {
    parse_lab(&read_text(path)?)
}

pub fn write_lab(track: &AnnotationTrack, path: &Path) -> Result<()> {
    write_atomic(path, format_lab(track).as_bytes())
}
