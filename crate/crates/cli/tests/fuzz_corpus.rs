//! Replays the checked-in config fuzz seeds and mutations of them on stable.

use std::path::PathBuf;

use surrogate_cli::{parse_config, CliConfig};

#[test]
fn config_seeds() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/config");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed = parse_config(&text, &CliConfig::default()).and_then(|c| c.validate().map(|_| c));
        let name = path.file_name().unwrap().to_string_lossy();
        assert_eq!(parsed.is_ok(), name != "unknown_key", "{name}: {:?}", parsed.err());
        for cut in (0..text.len()).filter(|&i| text.is_char_boundary(i)) {
            if let Ok(cfg) = parse_config(&text[..cut], &CliConfig::default()) {
                let _ = cfg.validate();
            }
        }
        n += 1;
    }
    assert!(n > 0);
}
