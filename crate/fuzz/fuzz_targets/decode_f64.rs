#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_core::io::{decode_f64_le, encode_f64_le};

fuzz_target!(|data: &[u8]| {
    if let Ok(values) = decode_f64_le(data, None) {
        // every bit pattern survives, NaN payloads included
        assert_eq!(encode_f64_le(&values), data);
    }
});
