#![no_main]

use libfuzzer_sys::fuzz_target;
use tvmlm::cli::config::{parse_pairs, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_pairs(text);
    if let Ok(cfg) = RunConfig::parse(text) {
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).expect("round trip").to_text(), text);
    }
});
