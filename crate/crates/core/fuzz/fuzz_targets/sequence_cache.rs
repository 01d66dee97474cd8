#![no_main]

use libfuzzer_sys::fuzz_target;
use tvmlm::corpus::read_sequence_cache;

fuzz_target!(|data: &[u8]| {
    if let Ok(seqs) = read_sequence_cache(data, 64) {
        for s in &seqs {
            s.validate(64).expect("decoded sequences are valid");
        }
    }
});
