#![no_main]

use btc_core::chord::parse_chord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(label) = parse_chord(text) {
        assert_eq!(parse_chord(&label.to_string()).unwrap(), label);
    }
});
