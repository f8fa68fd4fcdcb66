#![no_main]

use btc_core::io::{format_attention, parse_attention};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(dump) = parse_attention(text) {
        assert_eq!(parse_attention(&format_attention(&dump)).unwrap(), dump);
    }
});
