#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::distill::LossLogLine;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(line) = serde_json::from_str::<LossLogLine>(text) {
        let _ = line.to_json();
    }
});
