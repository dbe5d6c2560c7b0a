//! Packed reduced basis: manifest JSON, a NUL byte, then `mean`, `basis`,
//! `encoder` and `energy` blobs.

#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_core::artifacts::basis_from_packed;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = basis_from_packed(data) {
        assert_eq!(b.basis.shape(), (b.dim(), b.rank()));
    }
});
