//! Replays the fuzz corpus seeds through the fuzz targets' invariants.

use std::path::PathBuf;

use btc_core::chord::parse_chord;
use btc_core::io::{
    decode_btcf, decode_checkpoint, encode_btcf, encode_checkpoint, format_attention, format_lab,
    parse_attention, parse_kv, parse_lab, parse_stats,
};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).expect("text seed")
}

#[test]
fn chord_seeds() {
    let mut parsed = 0;
    for (name, bytes) in seeds("parse_chord") {
        if let Ok(label) = parse_chord(text(&bytes)) {
            assert_eq!(parse_chord(&label.to_string()).unwrap(), label, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed > 0);
}

#[test]
fn lab_seeds() {
    for (name, bytes) in seeds("parse_lab") {
        let track = parse_lab(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_lab(&format_lab(&track)).unwrap();
        assert_eq!(again.intervals().len(), track.intervals().len(), "{name}");
    }
}

#[test]
fn btcf_seeds() {
    for (name, bytes) in seeds("decode_btcf") {
        if let Ok(m) = decode_btcf(&bytes) {
            assert_eq!(encode_btcf(&m), bytes, "{name}");
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("decode_checkpoint") {
        let ckpt = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_checkpoint(&ckpt), bytes, "{name}");
        ckpt.into_model().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn attention_seeds() {
    for (name, bytes) in seeds("parse_attention") {
        let dump = parse_attention(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_attention(&format_attention(&dump)).unwrap(), dump, "{name}");
    }
}

#[test]
fn kv_seeds() {
    for (name, bytes) in seeds("parse_kv") {
        parse_kv(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        if name.ends_with("stats") {
            parse_stats(text(&bytes)).unwrap();
        }
    }
}
