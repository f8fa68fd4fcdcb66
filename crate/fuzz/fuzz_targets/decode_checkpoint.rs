#![no_main]

use btc_core::io::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(bytes) {
        assert_eq!(encode_checkpoint(&ckpt), bytes);
        let _ = ckpt.into_model();
    }
});
