#![no_main]

use libfuzzer_sys::fuzz_target;
use surrogate_cli::{parse_config, CliConfig};

fuzz_target!(|data: &str| {
    if let Ok(cfg) = parse_config(data, &CliConfig::default()) {
        let _ = cfg.validate();
    }
});
