#![no_main]

use btc_core::io::{parse_kv, parse_stats};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_kv(text);
    let _ = parse_stats(text);
});
