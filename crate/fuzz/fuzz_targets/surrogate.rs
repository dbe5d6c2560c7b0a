//! Packed operator surrogate: manifest JSON, a NUL byte, then the decoder and
//! coefficient-map blobs in the order the manifest implies.

#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_core::artifacts::surrogate_from_packed;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = surrogate_from_packed(data) {
        // a decoded surrogate must be usable, not just constructible
        let e = nalgebra::DVector::from_element(s.d_in(), 0.1);
        let _ = s.predict(&e);
    }
});
