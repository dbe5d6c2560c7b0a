//! Packed dataset: manifest JSON, a NUL byte, then `coeffs`, `inputs`,
//! `outputs` and optionally `jacobians`.

#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_core::artifacts::dataset_from_packed;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = dataset_from_packed(data) {
        let _ = ds.to_training(ds.manifest.d_in);
    }
});
