#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::corpus::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(vocab) = Vocabulary::parse(text) else { return };
    for probe in ["Where was Alba born?", text] {
        let ids = vocab.encode(probe);
        assert!(ids.iter().all(|&i| i < vocab.len()));
        let _ = vocab.decode(&ids);
    }
});
