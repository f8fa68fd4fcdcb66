#![no_main]

use btc_core::io::{format_lab, parse_lab};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(track) = parse_lab(text) {
        let again = parse_lab(&format_lab(&track)).expect("formatted output parses");
        assert_eq!(again.intervals().len(), track.intervals().len());
    }
});
