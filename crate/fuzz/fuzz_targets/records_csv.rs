#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_core::metrics::{pareto_frontier, read_records, CostAxis, ErrorAxis};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_records(data) {
        let _ = pareto_frontier(&records, CostAxis::N, ErrorAxis::L2);
    }
});
