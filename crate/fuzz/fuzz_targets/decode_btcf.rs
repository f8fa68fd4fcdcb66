#![no_main]

use btc_core::io::{decode_btcf, encode_btcf};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(m) = decode_btcf(bytes) {
        assert_eq!(encode_btcf(&m), bytes);
    }
});
