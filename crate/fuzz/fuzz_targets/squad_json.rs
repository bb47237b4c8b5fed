#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::corpus::squad::parse_squad;
use waldorf::corpus::{PackingConfig, Vocabulary};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = parse_squad(text) else { return };
    // packing must reject bad answer offsets, never panic on them
    let vocab = Vocabulary::build(file.texts().take(20), 64).or_else(|_| Vocabulary::build(["a b c"], 16)).unwrap();
    let _ = file.examples(&vocab, PackingConfig::new(32));
});
