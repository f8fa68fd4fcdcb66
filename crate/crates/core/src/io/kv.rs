use std::path::Path;

use super::{read_text, IoError, Result};
use crate::features::NormStats;

/// `key=value` lines in order. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: &str| IoError::Line {
            line: i + 1,
            message: message.to_string(),
        };
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(bad("empty key"));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    parse_kv(&read_text(path)?)
}

/// `mean=` and `variance=` lines with round-trip precision.
pub fn format_stats(stats: &NormStats) -> String {
    format!("mean={}\nvariance={}\n", stats.mean, stats.variance)
}

pub fn parse_stats(text: &str) -> Result<NormStats> {
    let (mut mean, mut variance) = (None, None);
    for (k, v) in parse_kv(text)? {
        let slot = match k.as_str() {
            "mean" => &mut mean,
            "variance" => &mut variance,
            _ => return Err(IoError::Header(format!("unknown stats key {k:?}"))),
        };
        *slot = Some(
            v.parse::<f64>()
                .map_err(|_| IoError::Header(format!("bad value {v:?} for {k}")))?,
        );
    }
    match (mean, variance) {
        (Some(m), Some(v)) => Ok(NormStats::new(m, v)?),
        _ => Err(IoError::Header("stats need both mean and variance".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# comment\n\n a = 1 \nb=x=y\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x=y".into())]);
        assert!(matches!(parse_kv("a=1\nnope\n"), Err(IoError::Line { line: 2, .. })));
        assert!(matches!(parse_kv("=1\n"), Err(IoError::Line { line: 1, .. })));
    }

    #[test]
    fn stats_round_trip() {
        let s = NormStats::new(-4.000000000000001, 1.0 / 3.0).unwrap();
        assert_eq!(parse_stats(&format_stats(&s)).unwrap(), s);
        assert!(parse_stats("mean=1\n").is_err());
        assert!(parse_stats("mean=1\nvariance=0\n").is_err());
        assert!(parse_stats("mean=1\nvariance=1\nother=2\n").is_err());
    }
}
