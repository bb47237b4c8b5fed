#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use waldorf::corpus::{generate_synthetic_corpus, Vocabulary};

fn vocab() -> &'static Vocabulary {
    static V: OnceLock<Vocabulary> = OnceLock::new();
    V.get_or_init(|| Vocabulary::build(generate_synthetic_corpus(0, 50).texts(), 300).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let n_chars = text.chars().count();
    let mut last_end = 0;
    for t in vocab().encode_with_offsets(text) {
        assert!(t.start < t.end && t.end <= n_chars && t.start >= last_end);
        last_end = t.end;
    }
});
