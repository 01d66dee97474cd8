#![no_main]

use libfuzzer_sys::fuzz_target;
use tvmlm::corpus::TaggedReader;

fuzz_target!(|data: &[u8]| {
    let mut reader = TaggedReader::new(data);
    for sentence in reader.by_ref() {
        if let Ok(s) = sentence {
            assert!(!s.is_empty());
        }
    }
});
