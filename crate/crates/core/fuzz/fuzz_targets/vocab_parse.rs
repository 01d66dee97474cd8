#![no_main]

use libfuzzer_sys::fuzz_target;
use tvmlm::corpus::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(vocab) = Vocabulary::parse(text) {
        // a parsed vocabulary survives its own serialization
        let again = Vocabulary::parse(&vocab.to_text()).expect("round trip");
        assert_eq!(again.fingerprint(), vocab.fingerprint());
        for word in text.split_whitespace().take(16) {
            for id in vocab.wordpiece(word) {
                assert!((id as usize) < vocab.len());
            }
        }
    }
});
